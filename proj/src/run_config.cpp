// SPDX-License-Identifier: Apache-2.0
#include "tbvad/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "tbvad/error.hpp"
#include "tbvad/hashing.hpp"

namespace tbvad {

using nlohmann::json;

namespace {

/// Reads keys of one JSON object and rejects the ones nobody asked for.
class Section {
public:
  Section(const json &j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ValidationError("config: '" + path_ + "' must be an object");
  }

  template <class T> void get(const char *key, T &out) {
    seen_.insert(key);
    if (!j_.contains(key))
      return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception &e) {
      throw ValidationError("config: bad value for '" + name(key) + "': " + e.what());
    }
  }
  template <class T> void get(const char *key, std::optional<T> &out) {
    T tmp{};
    if (j_.contains(key)) {
      get(key, tmp);
      out = std::move(tmp);
    }
    seen_.insert(key);
  }
  void get_path(const char *key, std::optional<std::filesystem::path> &out) {
    std::optional<std::string> s;
    get(key, s);
    if (s)
      out = *s;
  }
  const json *child(const char *key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  bool has(const char *key) const { return j_.contains(key); }
  std::string name(const std::string &key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  void finish() const {
    for (const auto &[k, _] : j_.items())
      if (!seen_.count(k))
        throw ValidationError("config: unknown key '" + name(k) + "'");
  }

private:
  const json &j_;
  std::string path_;
  std::set<std::string> seen_;
};

} // namespace

RunConfig RunConfig::from_json(const json &j) {
  RunConfig c;
  Section top(j, "");
  top.get("seed", c.seed);
  top.get("gen_endpoint", c.gen_endpoint);
  top.get("extractive", c.extractive);
  if (top.has("aspects")) {
    std::string csv;
    top.get("aspects", csv);
    c.pipeline.model.aspects = make_aspect_set(parse_aspect_list(csv));
  }

  auto &emb = c.pipeline.embedder;
  bool dim_set = false;
  if (const json *e = top.child("embedder")) {
    Section s(*e, "embedder");
    std::string backend = std::string(to_string(emb.backend));
    s.get("backend", backend);
    emb.backend = parse_backend(backend);
    dim_set = s.has("dim");
    s.get("dim", emb.dim);
    s.get("max_tokens", emb.max_tokens);
    s.get("knowledge_max_tokens", emb.knowledge_max_tokens);
    s.get("endpoint", emb.endpoint);
    std::optional<std::filesystem::path> cache;
    s.get_path("cache_dir", cache);
    if (cache)
      emb.cache_dir = cache;
    s.get("seed", emb.seed);
    s.get("max_in_flight", emb.max_in_flight);
    s.finish();
  }
  auto &enc = c.pipeline.model.encoder;
  if (const json *e = top.child("encoder")) {
    Section s(*e, "encoder");
    s.get("num_layers", enc.num_layers);
    s.get("num_heads", enc.num_heads);
    s.get("d_model", enc.d_model);
    s.get("ff_dim", enc.ff_dim);
    s.get("d_latent", enc.d_latent);
    s.finish();
  }
  if (!dim_set)
    emb.dim = enc.d_model;
  c.pipeline.model.importance_hidden = enc.d_model;
  if (const json *e = top.child("model")) {
    Section s(*e, "model");
    s.get("importance_hidden", c.pipeline.model.importance_hidden);
    s.get("frames", c.pipeline.model.frames);
    std::string att = "none";
    s.get("attention", att);
    if (att == "none")
      c.pipeline.model.attention = AttentionNorm::none;
    else if (att == "row_softmax")
      c.pipeline.model.attention = AttentionNorm::row_softmax;
    else
      throw ValidationError("config: model.attention must be none or row_softmax");
    s.finish();
  }
  if (const json *e = top.child("train")) {
    Section s(*e, "train");
    auto &t = c.pipeline.train;
    s.get("learning_rate", t.learning_rate);
    s.get("epochs", t.epochs);
    s.get("batch_size", t.batch_size);
    s.get("l2_weight", t.l2_weight);
    s.get("freeze_importance_net", t.freeze_importance_net);
    s.get("head_only", t.head_only);
    s.get("max_grad_norm", t.max_grad_norm);
    std::string opt(to_string(t.optimizer));
    s.get("optimizer", opt);
    t.optimizer = parse_optimizer(opt);
    s.get("adam_beta1", t.adam_beta1);
    s.get("adam_beta2", t.adam_beta2);
    s.get("adam_eps", t.adam_eps);
    s.finish();
  }
  if (const json *e = top.child("eval")) {
    Section s(*e, "eval");
    s.get("threshold", c.pipeline.threshold);
    s.get("frame_level_auc", c.pipeline.frame_level_auc);
    s.get("metric", c.metric);
    s.finish();
  }
  if (const json *e = top.child("explain")) {
    Section s(*e, "explain");
    s.get("topk", c.topk);
    s.get("counterfactual", c.counterfactual);
    s.finish();
  }
  if (const json *e = top.child("paths")) {
    Section s(*e, "paths");
    s.get_path("captions", c.captions);
    s.get_path("test_captions", c.test_captions);
    s.get_path("knowledge", c.knowledge);
    s.get_path("model", c.model);
    s.get_path("out", c.out);
    s.get_path("prompts", c.prompts);
    s.finish();
  }
  if (const json *e = top.child("synth"))
    c.synth = SynthConfig::from_json(*e);
  top.finish();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error &e) {
    throw ValidationError("config file " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::finalize() {
  auto &m = pipeline.model;
  m.init_seed = seed;
  m.train_seed = seed;
  pipeline.train.seed = seed;
  m.embed_backend = pipeline.embedder.backend;
  m.embed_dim = pipeline.embedder.dim;
  m.embed_seed = pipeline.embedder.seed;
  if (metric != "auc" && metric != "ap" && metric != "acc")
    throw ValidationError("--metric must be auc, ap or acc");
  if (topk == 0)
    throw ValidationError("--topk must be at least 1");
  if (pipeline.threshold < 0.0 || pipeline.threshold > 1.0)
    throw ValidationError("eval.threshold must lie in [0, 1]");
  if (prompts)
    pipeline.prompts = load_prompts(*prompts);
  pipeline.embedder.validate();
  m.validate();
  pipeline.train.validate();
}

json RunConfig::to_json() const {
  json j = pipeline.to_json();
  j["seed"] = seed;
  j["gen_endpoint"] = gen_endpoint ? json(*gen_endpoint) : json(nullptr);
  j["extractive"] = extractive;
  j["metric"] = metric;
  j["topk"] = topk;
  j["counterfactual"] = counterfactual;
  return j;
}

std::string RunConfig::digest() const { return sha256_hex(to_json().dump()); }

} // namespace tbvad
