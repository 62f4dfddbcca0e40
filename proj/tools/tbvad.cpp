// SPDX-License-Identifier: Apache-2.0
// tbvad: command-line front end for knowledge building, training,
// evaluation, explanation and the evaluation sweeps.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tbvad/classifier.hpp"
#include "tbvad/error.hpp"
#include "tbvad/harness.hpp"
#include "tbvad/hashing.hpp"
#include "tbvad/log.hpp"
#include "tbvad/metrics.hpp"
#include "tbvad/model.hpp"
#include "tbvad/run_config.hpp"
#include "tbvad/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tbvad;

namespace {

struct Flags {
  std::string config, captions, test_captions, knowledge, model, out;
  std::optional<std::uint64_t> seed;
  std::string aspects;
  std::optional<std::size_t> topk;
  bool counterfactual = false;
  std::string embed_endpoint, gen_endpoint;
  bool extractive = false;
  std::string metric;
  std::string combos = "table3";
  std::string video_id;
  bool self_check = false;
  bool frame_level = false;
  bool verbose = false;
  // gen-synth
  std::optional<std::size_t> videos;
  std::string domain, planted, id_prefix;
  std::optional<double> plant_rate;
};

std::string read_file(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw ValidationError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path &p, const std::string &data) {
  if (p.has_parent_path())
    fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error("cannot write " + p.string());
    out << data;
    if (!out.flush())
      throw Error("write failed for " + p.string());
  }
  fs::rename(tmp, p);
}

fs::path require(const std::optional<fs::path> &p, const char *flag) {
  if (!p)
    throw ValidationError(std::string("missing required flag ") + flag);
  return *p;
}

fs::path require_input(const std::optional<fs::path> &p, const char *flag) {
  fs::path path = require(p, flag);
  if (!fs::exists(path))
    throw ValidationError(std::string(flag) + ": no such file " + path.string());
  return path;
}

/// Exclusive lock on the output directory, released on scope exit.
class OutputLock {
public:
  explicit OutputLock(const fs::path &out) {
    fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    fs::create_directories(dir);
    path_ = dir / ".tbvad.lock";
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw Error("output directory " + dir.string() +
                  " is locked by another run (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~OutputLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock &) = delete;
  OutputLock &operator=(const OutputLock &) = delete;

private:
  fs::path path_;
  int fd_ = -1;
};

struct Context {
  std::string command;
  RunConfig cfg;
  std::vector<fs::path> inputs;
};

void append_run_log(const Context &ctx, int status) {
  fs::path log_path = ".tbvad/run.log";
  if (const char *env = std::getenv("TBVAD_RUN_LOG"); env && *env)
    log_path = env;
  try {
    json inputs = json::object();
    for (const auto &p : ctx.inputs) {
      std::error_code ec;
      if (fs::is_regular_file(p, ec))
        inputs[p.string()] = sha256_hex(read_file(p));
    }
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    json line = {{"timestamp", stamp},
                 {"command", ctx.command},
                 {"config_digest", ctx.cfg.digest()},
                 {"inputs", inputs},
                 {"exit", status}};
    if (log_path.has_parent_path())
      fs::create_directories(log_path.parent_path());
    std::ofstream out(log_path, std::ios::app);
    out << line.dump() << '\n';
  } catch (const std::exception &e) {
    log::warn(std::string("could not append to run log: ") + e.what());
  }
}

std::unique_ptr<Summarizer> make_summarizer(const RunConfig &cfg,
                                            std::unique_ptr<Generator> &gen_slot) {
  if (cfg.extractive)
    return std::make_unique<ExtractiveSummarizer>();
  if (!cfg.gen_endpoint)
    throw ValidationError("knowledge building needs --gen-endpoint or --extractive");
  gen_slot = std::make_unique<RemoteGenerator>(*cfg.gen_endpoint,
                                               cfg.pipeline.embedder.cache_dir);
  return std::make_unique<LlmSummarizer>(*gen_slot);
}

/// Embedder settings for an existing model: architecture from the model
/// header, transport settings from the run config.
EmbedderConfig embedder_for(const ModelParams &m, const RunConfig &cfg) {
  EmbedderConfig e = cfg.pipeline.embedder;
  e.backend = m.config.embed_backend;
  e.dim = m.config.embed_dim;
  e.seed = m.config.embed_seed;
  e.validate();
  return e;
}

CaptionCorpus load_corpus(const fs::path &p) {
  return load_captions(p, p.stem().string());
}

void print(const json &j) { std::cout << j.dump(2) << std::endl; }

// ---- commands ----

int cmd_build_knowledge(Context &ctx) {
  auto &cfg = ctx.cfg;
  const fs::path captions = require_input(cfg.captions, "--captions");
  const fs::path out = require(cfg.out, "--out");
  ctx.inputs = {captions};
  const CaptionCorpus corpus = load_corpus(captions);
  auto [normal, abnormal] = group_by_class(corpus);
  std::unique_ptr<Generator> gen;
  auto summarizer = make_summarizer(cfg, gen);
  OutputLock lock(out);
  const KnowledgeBase kb =
      build_knowledge(normal, abnormal, cfg.pipeline.prompts, cfg.pipeline.embedder,
                      cfg.pipeline.model.aspects, *summarizer);
  const std::string text = kb.dump();
  write_file(out, text);
  print({{"knowledge", out.string()},
         {"aspects", join_aspects(kb.aspects)},
         {"sha256", sha256_hex(text)}});
  return 0;
}

int cmd_train(Context &ctx) {
  auto &cfg = ctx.cfg;
  const fs::path captions = require_input(cfg.captions, "--captions");
  const fs::path kb_path = require_input(cfg.knowledge, "--knowledge");
  const fs::path out = require(cfg.out ? cfg.out : cfg.model, "--out");
  ctx.inputs = {captions, kb_path};
  const CaptionCorpus corpus = load_corpus(captions);
  const KnowledgeBase kb = load_knowledge(kb_path, cfg.pipeline.embedder);
  const auto embedder = make_embedder(cfg.pipeline.embedder);
  ModelConfig mc = cfg.pipeline.model;
  mc.aspects = kb.aspects;
  OutputLock lock(out);
  TrainReport report;
  const ModelParams model =
      train(corpus, kb, mc, cfg.pipeline.train, *embedder, &report);
  save_model(model, out);
  print({{"model", out.string()},
         {"digest", model.digest()},
         {"parameters", model.parameter_count()},
         {"epoch_loss", report.epoch_loss}});
  return 0;
}

int cmd_eval(Context &ctx) {
  auto &cfg = ctx.cfg;
  const fs::path captions = require_input(cfg.captions, "--captions");
  const fs::path kb_path = require_input(cfg.knowledge, "--knowledge");
  const fs::path model_path = require_input(cfg.model, "--model");
  ctx.inputs = {captions, kb_path, model_path};
  const ModelParams model = load_model(model_path);
  const EmbedderConfig ecfg = embedder_for(model, cfg);
  const KnowledgeBase kb = load_knowledge(kb_path, ecfg);
  const auto embedder = make_embedder(ecfg);
  const CaptionCorpus corpus = load_corpus(captions);
  const MetricsReport r = evaluate(corpus, kb, model, *embedder, cfg.pipeline);
  const std::optional<double> &primary =
      cfg.metric == "auc" ? r.auc : cfg.metric == "ap" ? r.ap : r.acc;
  if (!primary)
    throw ValidationError("--metric " + cfg.metric +
                          " is undefined for this corpus's label mix");
  json j = r.to_json();
  j["metric"] = cfg.metric;
  j["value"] = *primary;
  if (cfg.out) {
    OutputLock lock(*cfg.out);
    write_file(*cfg.out, r.to_text());
  } else {
    std::cerr << r.to_text();
  }
  print(j);
  return 0;
}

int cmd_explain(Context &ctx, const std::string &video_id) {
  auto &cfg = ctx.cfg;
  const fs::path captions = require_input(cfg.captions, "--captions");
  const fs::path kb_path = require_input(cfg.knowledge, "--knowledge");
  const fs::path model_path = require_input(cfg.model, "--model");
  ctx.inputs = {captions, kb_path, model_path};
  const ModelParams model = load_model(model_path);
  const EmbedderConfig ecfg = embedder_for(model, cfg);
  const KnowledgeBase kb = load_knowledge(kb_path, ecfg);
  const auto embedder = make_embedder(ecfg);
  const CaptionCorpus corpus = load_corpus(captions);
  const VideoRecord *video = nullptr;
  if (video_id.empty()) {
    if (corpus.videos.size() != 1)
      throw ValidationError("--video-id is required when the caption file holds "
                            "more than one video");
    video = &corpus.videos.front();
  } else {
    video = corpus.find(video_id);
    if (!video)
      throw ValidationError("--video-id: no video '" + video_id + "' in " +
                            captions.string());
  }
  std::unique_ptr<RemoteGenerator> gen;
  if (cfg.gen_endpoint)
    gen = std::make_unique<RemoteGenerator>(*cfg.gen_endpoint, ecfg.cache_dir);
  ExplainOptions opts{cfg.topk, cfg.counterfactual, gen.get()};
  const ExplanationRecord r = explain_video(*video, kb, model, *embedder, opts);
  if (cfg.out) {
    OutputLock lock(*cfg.out);
    write_file(*cfg.out, r.rationale + "\n");
  }
  print(r.to_json());
  return 0;
}

int cmd_ablate(Context &ctx, const std::string &combos_arg) {
  auto &cfg = ctx.cfg;
  const fs::path captions = require_input(cfg.captions, "--captions");
  const fs::path test = require_input(cfg.test_captions, "--test-captions");
  ctx.inputs = {captions, test};
  std::vector<AspectSet> combos;
  if (combos_arg == "table3") {
    combos = table3_combos();
  } else {
    if (!fs::exists(combos_arg))
      throw ValidationError("--combos: no such file " + combos_arg);
    ctx.inputs.push_back(combos_arg);
    combos = parse_combos(read_file(combos_arg));
  }
  const CaptionCorpus train_c = load_corpus(captions);
  const CaptionCorpus test_c = load_corpus(test);
  std::unique_ptr<Generator> gen;
  auto summarizer = make_summarizer(cfg, gen);
  const auto embedder = make_embedder(cfg.pipeline.embedder);
  std::optional<OutputLock> lock;
  if (cfg.out)
    lock.emplace(*cfg.out);
  const auto rows =
      ablate_slots(train_c, test_c, combos, cfg.pipeline, *summarizer, *embedder);
  const std::string csv = ablation_csv(rows);
  if (cfg.out)
    write_file(*cfg.out, csv);
  else
    std::cerr << csv;
  json out = json::array();
  for (const auto &r : rows) {
    json row = {{"aspects", join_aspects(r.aspects)}, {"failed", r.failed}};
    if (r.failed) {
      row["error"] = r.error;
    } else {
      row["auc"] = r.auc;
      row["ap"] = r.ap;
    }
    out.push_back(row);
  }
  print({{"config_digest", cfg.pipeline.digest()}, {"rows", out}});
  const bool all_failed =
      std::all_of(rows.begin(), rows.end(), [](const AblationRow &r) { return r.failed; });
  return all_failed ? 2 : 0;
}

int cmd_caption_stats(Context &ctx) {
  const fs::path captions = require_input(ctx.cfg.captions, "--captions");
  ctx.inputs = {captions};
  const CaptionCorpus corpus = load_corpus(captions);
  const CaptionStats s = caption_stats(corpus);
  print({{"captions", corpus.caption_count()},
         {"videos", corpus.videos.size()},
         {"avg_len", s.avg_len},
         {"tfidf", s.tfidf}});
  return 0;
}

int cmd_cross_eval(Context &ctx, bool self_check) {
  auto &cfg = ctx.cfg;
  const fs::path captions = require_input(cfg.captions, "--captions");
  const fs::path test = require_input(cfg.test_captions, "--test-captions");
  ctx.inputs = {captions, test};
  CaptionCorpus train_c = load_corpus(captions);
  CaptionCorpus test_c = load_corpus(test);
  std::unique_ptr<Generator> gen;
  auto summarizer = make_summarizer(cfg, gen);
  const auto embedder = make_embedder(cfg.pipeline.embedder);
  const MetricsReport r =
      cross_eval(train_c, test_c, cfg.pipeline, *summarizer, *embedder, self_check);
  json j = r.to_json();
  j["train_tag"] = train_c.source_tag;
  if (cfg.out) {
    OutputLock lock(*cfg.out);
    write_file(*cfg.out, r.to_text());
  } else {
    std::cerr << r.to_text();
  }
  print(j);
  return 0;
}

int cmd_gen_synth(Context &ctx) {
  auto &cfg = ctx.cfg;
  const fs::path out = require(cfg.out, "--out");
  const SynthResult res = generate_synthetic(cfg.synth);
  OutputLock lock(out);
  write_file(out, captions_to_jsonl(res.corpus));
  const fs::path manifest = out.string() + ".manifest.json";
  write_file(manifest, res.manifest_json(cfg.synth).dump(2) + "\n");
  std::size_t n_abn = 0;
  for (const auto &v : res.manifest)
    n_abn += v.label == Label::abnormal;
  print({{"captions", out.string()},
         {"manifest", manifest.string()},
         {"videos", res.manifest.size()},
         {"abnormal", n_abn},
         {"caption_count", res.corpus.caption_count()}});
  return 0;
}

RunConfig assemble(const Flags &f, const std::string &command) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : RunConfig::load(f.config);
  auto set_path = [](std::optional<fs::path> &dst, const std::string &v) {
    if (!v.empty())
      dst = v;
  };
  set_path(cfg.captions, f.captions);
  set_path(cfg.test_captions, f.test_captions);
  set_path(cfg.knowledge, f.knowledge);
  set_path(cfg.model, f.model);
  set_path(cfg.out, f.out);
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.synth.seed = *f.seed;
  }
  if (!f.aspects.empty())
    cfg.pipeline.model.aspects = make_aspect_set(parse_aspect_list(f.aspects));
  if (f.topk)
    cfg.topk = *f.topk;
  if (f.counterfactual)
    cfg.counterfactual = true;
  if (!f.embed_endpoint.empty()) {
    cfg.pipeline.embedder.endpoint = f.embed_endpoint;
    cfg.pipeline.embedder.backend = EmbedBackend::remote;
  }
  if (!f.gen_endpoint.empty())
    cfg.gen_endpoint = f.gen_endpoint;
  if (f.extractive)
    cfg.extractive = true;
  if (!f.metric.empty())
    cfg.metric = f.metric;
  if (f.frame_level)
    cfg.pipeline.frame_level_auc = true;
  if (!cfg.pipeline.embedder.cache_dir)
    cfg.pipeline.embedder.cache_dir = DiskCache::dir_from_env();
  if (command == "gen-synth") {
    if (f.videos)
      cfg.synth.videos = *f.videos;
    if (!f.domain.empty())
      cfg.synth.domain = parse_domain(f.domain);
    if (!f.planted.empty())
      cfg.synth.planted = make_aspect_set(parse_aspect_list(f.planted));
    if (f.plant_rate)
      cfg.synth.plant_rate = *f.plant_rate;
    if (!f.id_prefix.empty())
      cfg.synth.id_prefix = f.id_prefix;
    cfg.synth.validate();
  }
  cfg.finalize();
  return cfg;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Text-based video anomaly detection with structured knowledge"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;

  app.add_option("--config", f.config, "JSON run configuration");
  app.add_option("--captions", f.captions, "caption JSONL (training or evaluation set)");
  app.add_option("--test-captions", f.test_captions, "held-out caption JSONL");
  app.add_option("--knowledge", f.knowledge, "knowledge JSON");
  app.add_option("--model", f.model, "model file");
  app.add_option("--out", f.out, "output path");
  app.add_option("--seed", f.seed, "seed for initialisation, training and generation");
  app.add_option("--aspects", f.aspects, "active aspects, e.g. context,action,object,environment");
  app.add_option("--topk", f.topk, "number of evidence sentences");
  app.add_flag("--counterfactual", f.counterfactual, "compute counterfactual slot margins");
  app.add_option("--embed-endpoint", f.embed_endpoint, "remote embedding service URL");
  app.add_option("--gen-endpoint", f.gen_endpoint, "remote text generation service URL");
  app.add_flag("--extractive", f.extractive, "offline extractive summarizer");
  app.add_option("--metric", f.metric, "primary metric")->check(CLI::IsMember({"auc", "ap", "acc"}));
  app.add_flag("-v,--verbose", f.verbose, "log progress to stderr");

  auto *build = app.add_subcommand("build-knowledge", "summarize captions into class knowledge");
  auto *train_cmd = app.add_subcommand("train", "train the detector");
  auto *eval = app.add_subcommand("eval", "score a caption set");
  eval->add_flag("--frame-level", f.frame_level, "compute AUC over captions rather than videos");
  auto *explain = app.add_subcommand("explain", "explain the prediction for one video");
  explain->add_option("--video-id", f.video_id, "video to explain");
  auto *ablate = app.add_subcommand("ablate", "knowledge slot ablation sweep");
  ablate->add_option("--combos", f.combos, "'table3' or a file with one combination per line");
  auto *stats = app.add_subcommand("caption-stats", "caption length and TF-IDF statistics");
  auto *cross = app.add_subcommand("cross-eval", "train on one corpus, test on another");
  cross->add_flag("--self-check", f.self_check, "allow identical source tags");
  auto *synth = app.add_subcommand("gen-synth", "write a synthetic caption corpus");
  synth->add_option("--videos", f.videos, "number of videos");
  synth->add_option("--domain", f.domain, "vocabulary: a, b-shared or b-disjoint");
  synth->add_option("--planted", f.planted, "aspects carrying abnormal vocabulary");
  synth->add_option("--plant-rate", f.plant_rate, "per-frame planting probability");
  synth->add_option("--id-prefix", f.id_prefix, "video id prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  log::set_level(f.verbose ? log::Level::info : log::Level::warning);

  Context ctx;
  ctx.command = app.get_subcommands().front()->get_name();
  int status = 2;
  try {
    ctx.cfg = assemble(f, ctx.command);
    if (build->parsed()) status = cmd_build_knowledge(ctx);
    else if (train_cmd->parsed()) status = cmd_train(ctx);
    else if (eval->parsed()) status = cmd_eval(ctx);
    else if (explain->parsed()) status = cmd_explain(ctx, f.video_id);
    else if (ablate->parsed()) status = cmd_ablate(ctx, f.combos);
    else if (stats->parsed()) status = cmd_caption_stats(ctx);
    else if (cross->parsed()) status = cmd_cross_eval(ctx, f.self_check);
    else if (synth->parsed()) status = cmd_gen_synth(ctx);
  } catch (const ValidationError &e) {
    std::cerr << "error: " << e.what() << '\n';
    status = 1;
  } catch (const CorruptFileError &e) {
    std::cerr << "error: " << e.what() << '\n';
    status = 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    status = 2;
  }
  append_run_log(ctx, status);
  return status;
}
