// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/stub_server.hpp"
#include "tbvad/classifier.hpp"
#include "tbvad/error.hpp"
#include "tbvad/harness.hpp"
#include "tbvad/log.hpp"
#include "tbvad/metrics.hpp"
#include "tbvad/model.hpp"
#include "tbvad/synth.hpp"

using namespace tbvad;
using testing::random_matrix;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string &what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char *f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Outcome metrics_vs_oracles() {
  Outcome o;
  Rng rng(1);
  double worst = 0.0;
  const auto t0 = Clock::now();
  for (int it = 0; it < 1000; ++it) {
    const std::size_t n = 2 + rng.below(19);
    std::vector<double> s(n);
    std::vector<int> y(n);
    // coarse scores on some instances force ties
    const bool coarse = it % 3 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? std::floor(rng.uniform(0, 5)) / 4.0 : rng.uniform(0, 1);
      y[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    worst = std::max({worst, std::abs(roc_auc(s, y) - oracle::auc_pairs(s, y)),
                      std::abs(average_precision(s, y) - oracle::ap_cutpoints(s, y))});
  }
  const double t = seconds_since(t0);
  o.require(worst <= 1e-12, fmt("max deviation %.3g", worst));
  o.require(t < 10.0, fmt("took %.2f s", t));
  if (o.pass)
    o.detail = fmt("1000 instances, max deviation %.3g, %.2f s", worst, t);
  return o;
}

Outcome gradient_check() {
  Outcome o;
  const auto g = testing::small_grad_instance(11);
  double worst = 0.0;
  std::string worst_name;
  const auto t0 = Clock::now();
  for (const auto &e : testing::gradient_check(g.model, g.samples, g.kctx, g.cfg, 1e-5)) {
    if (e.rel > worst) {
      worst = e.rel;
      worst_name = e.name;
    }
  }
  const double t = seconds_since(t0);
  o.require(worst <= 1e-4, worst_name + fmt(" relative error %.3g", worst));
  o.require(t < 30.0, fmt("took %.2f s", t));
  if (o.pass)
    o.detail = "worst group " + worst_name + fmt(" at %.3g, %.2f s", worst, t);
  return o;
}

Outcome reasoning_branch() {
  Outcome o;
  Rng rng(3);
  double att = 0.0;
  for (int it = 0; it < 200; ++it) {
    const std::size_t d = 2 + rng.below(10), t = 1 + rng.below(10);
    const Matrix K = random_matrix(4, d, rng);
    std::vector<bool> mask(t, true);
    if (t > 1 && rng.bernoulli(0.3))
      mask[rng.below(t)] = false;
    const TokenEmbeddingSeq h(random_matrix(t, d, rng), mask);
    const auto got = slot_attention(K, h);
    const auto [A, C] = oracle::slot_attention(K, h.vectors, mask);
    for (std::size_t i = 0; i < A.size(); ++i)
      att = std::max(att, std::abs(got.A.flat()[i] - A.flat()[i]));
    for (std::size_t i = 0; i < C.size(); ++i)
      att = std::max(att, std::abs(got.C.flat()[i] - C.flat()[i]));
  }
  o.require(att <= 1e-10, fmt("slot attention deviates by %.3g", att));

  for (int it = 0; it < 500; ++it) {
    Vector z(1 + rng.below(8));
    for (double &x : z)
      x = rng.uniform(-50, 50);
    const auto w = softmax(z);
    double sum = 0.0;
    for (double x : w)
      sum += x;
    o.require(std::abs(sum - 1.0) <= 1e-6, "softmax does not sum to one");
    Vector shifted = z;
    const double c = rng.uniform(-100, 100);
    for (double &x : shifted)
      x += c;
    const auto ws = softmax(shifted);
    for (std::size_t i = 0; i < w.size(); ++i)
      o.require(std::abs(w[i] - ws[i]) <= 1e-9, "softmax is not shift invariant");
    o.require(std::max_element(w.begin(), w.end()) - w.begin() ==
                  std::max_element(z.begin(), z.end()) - z.begin(),
              "softmax argmax differs from logit argmax");
  }

  int mismatches = 0;
  for (int it = 0; it < 500; ++it) {
    const std::size_t d = 3 + rng.below(6);
    const auto kb = testing::random_kb(rng, d, true);
    Vector hbar(d);
    for (double &x : hbar)
      x = rng.uniform(-1, 1);
    SlotImportance imp;
    for (int s = 0; s < 4; ++s)
      imp.z.push_back(static_cast<double>(rng.below(3)));
    imp.w = softmax(imp.z);
    const std::size_t k = 1 + rng.below(4);
    const Label v = rng.bernoulli(0.5) ? Label::normal : Label::abnormal;
    const auto got = retrieve_evidence(hbar, kb, v, imp, k);
    std::vector<Matrix> sentences;
    for (Aspect a : kb.aspects)
      sentences.push_back(kb.sentence_embeddings.at({v, a}));
    const auto want = oracle::retrieve(hbar, kb.aspects, imp.w, sentences, k);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].aspect == want[i].aspect &&
             got[i].sentence == kb.slot(v, want[i].aspect).sentences[want[i].sentence];
    mismatches += !same;
  }
  o.require(mismatches == 0, fmt("retrieval differs on %.0f of 500 instances", mismatches));
  if (o.pass)
    o.detail = fmt("attention deviation %.3g, retrieval 500/500", att);
  return o;
}

Outcome margins() {
  Outcome o;
  Rng rng(4);
  double worst_sum = 0.0;
  for (int it = 0; it < 200; ++it) {
    auto kb = testing::random_kb(rng, 8);
    const auto f = ImportanceNet::init(8, 6, rng);
    const TokenEmbeddingSeq h(random_matrix(1 + rng.below(6), 8, rng));
    const auto m = counterfactual_margins(h, kb, f, Label::abnormal);
    double sum = 0.0;
    for (const auto &[a, x] : m)
      sum += x;
    worst_sum = std::max(worst_sum, std::abs(sum));
    const auto swapped = counterfactual_margins(h, kb, f, Label::normal);
    for (const auto &[a, x] : m)
      o.require(std::abs(swapped.at(a) + x) <= 1e-12 && (x == 0.0 || swapped.at(a) * x < 0),
                "margin does not flip sign under class swap");
    kb.prototypes[Label::normal] = kb.prototypes[Label::abnormal];
    for (const auto &[a, x] : counterfactual_margins(h, kb, f, Label::abnormal))
      o.require(x == 0.0, "margin is nonzero for identical class knowledge");
  }
  o.require(worst_sum <= 1e-9, fmt("margins sum to %.3g", worst_sum));
  if (o.pass)
    o.detail = fmt("200 instances, max |sum| %.3g", worst_sum);
  return o;
}

Outcome end_to_end() {
  Outcome o;
  SynthConfig sc;
  sc.videos = 200;
  sc.seed = 0;
  const auto train_set = generate_synthetic(sc).corpus;
  sc.videos = 100;
  sc.seed = 1;
  sc.id_prefix = "test";
  const auto test_set = generate_synthetic(sc).corpus;

  PipelineConfig cfg;
  cfg.model.frames = 8;
  ExtractiveSummarizer ex;
  HashEmbedder emb(cfg.embedder.dim, cfg.embedder.seed);

  const auto t0 = Clock::now();
  const auto fit = fit_pipeline(train_set, cfg, all_aspects(), ex, emb);
  const double train_s = seconds_since(t0);
  const auto m = evaluate(test_set, fit.kb, fit.model, emb, cfg);
  o.require(train_s <= 300.0, fmt("training took %.1f s", train_s));
  o.require(m.auc && *m.auc >= 0.95, fmt("AUC %.4f", m.auc.value_or(-1)));
  o.require(m.ap && *m.ap >= 0.95, fmt("AP %.4f", m.ap.value_or(-1)));

  const AspectSet planted = {Aspect::action, Aspect::object};
  const AspectSet unplanted = {Aspect::context, Aspect::environment};
  const auto rows = ablate_slots(train_set, test_set, {planted, unplanted}, cfg, ex, emb);
  for (const auto &r : rows)
    o.require(!r.failed, "ablation row failed: " + r.error);
  if (o.pass)
    o.require(rows[0].auc > rows[1].auc,
              fmt("ablation AUC action+object %.4f is not above context+environment %.4f",
                  rows[0].auc, rows[1].auc));
  const std::string summary =
      fmt("train %.1f s, AUC %.4f, AP %.4f", train_s, m.auc.value_or(-1), m.ap.value_or(-1)) +
      fmt(", ablation %.4f vs %.4f", rows[0].auc, rows[1].auc);
  o.detail = o.pass ? summary : o.detail + " (" + summary + ")";
  return o;
}

Outcome determinism() {
  Outcome o;
  testing::TempDir tmp("accept");
  SynthConfig sc;
  sc.videos = 40;
  sc.frames_min = 4;
  sc.frames_max = 6;
  const auto corpus = generate_synthetic(sc).corpus;
  o.require(captions_to_jsonl(corpus) == captions_to_jsonl(generate_synthetic(sc).corpus),
            "synthetic corpus differs between runs");

  PipelineConfig cfg;
  cfg.embedder.dim = 16;
  cfg.model.encoder = {1, 2, 16, 32, 16};
  cfg.model.importance_hidden = 16;
  cfg.model.embed_dim = 16;
  cfg.train.epochs = 3;
  ExtractiveSummarizer ex;
  HashEmbedder emb(16, 0);
  const auto a = fit_pipeline(corpus, cfg, all_aspects(), ex, emb);
  const auto b = fit_pipeline(corpus, cfg, all_aspects(), ex, emb);
  o.require(a.model.digest() == b.model.digest(), "model digests differ between runs");
  o.require(a.kb.dump() == b.kb.dump(), "knowledge differs between runs");

  save_model(a.model, tmp / "m.bin");
  const auto back = load_model(tmp / "m.bin");
  save_model(back, tmp / "m2.bin");
  std::ifstream f1(tmp / "m.bin", std::ios::binary), f2(tmp / "m2.bin", std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  o.require(s1.str() == s2.str() && back.digest() == a.model.digest(),
            "model save/load is not bitwise stable");
  auto pa = a.model, pb = back;
  auto ta = pa.tensors(), tb = pb.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i)
    o.require(*ta[i].tensor == *tb[i].tensor, "reloaded tensor " + ta[i].name + " differs");

  const auto kb2 = knowledge_from_json(nlohmann::json::parse(a.kb.dump()), cfg.embedder);
  o.require(kb2.dump() == a.kb.dump() && kb2.prototypes == a.kb.prototypes,
            "knowledge JSON round trip differs");
  ExplainOptions opts;
  opts.counterfactual = true;
  const auto rec = explain_video(corpus.videos[0], a.kb, a.model, emb, opts);
  o.require(ExplanationRecord::from_json(nlohmann::json::parse(rec.to_json().dump())) == rec,
            "explanation record JSON round trip differs");

  // remote run twice against the stub, sharing one cache directory
  testing::StubServer stub;
  EmbedderConfig remote;
  remote.backend = EmbedBackend::remote;
  remote.endpoint = stub.endpoint();
  remote.dim = 16;
  remote.cache_dir = tmp / "cache";
  auto [normal, abnormal] = group_by_class(corpus);
  auto remote_run = [&] {
    RemoteGenerator gen(stub.endpoint(), remote.cache_dir);
    LlmSummarizer summarizer(gen);
    return build_knowledge(normal, abnormal, default_prompts(), remote, all_aspects(),
                           summarizer)
        .dump();
  };
  const std::string first = remote_run();
  const int calls_first = stub.embed_calls + stub.generate_calls;
  const std::string second = remote_run();
  const int calls_second = stub.embed_calls + stub.generate_calls - calls_first;
  o.require(calls_first > 0, "first remote run made no calls");
  o.require(calls_second == 0, fmt("cached run made %.0f calls", calls_second));
  o.require(first == second, "cached remote run produced different knowledge");
  if (o.pass)
    o.detail = fmt("digests equal, first remote run %.0f calls, cached run 0", calls_first);
  return o;
}

Outcome hand_checks() {
  Outcome o;
  const auto r = slot_attention(Matrix{{2}}, TokenEmbeddingSeq(Matrix{{1}, {3}}));
  o.require(r.A == Matrix{{2, 6}} && r.C == Matrix{{20}}, "slot attention hand example");
  o.require(std::abs(sigmoid(std::log(3.0)) - 0.75) <= 1e-12, "sigmoid(ln 3)");
  const auto w = softmax(Vector{std::log(2.0), 0, 0, 0});
  const double want[] = {0.4, 0.2, 0.2, 0.2};
  for (std::size_t i = 0; i < 4; ++i)
    o.require(std::abs(w[i] - want[i]) <= 1e-12, "softmax([ln 2, 0, 0, 0])");
  const auto corpus =
      parse_captions(R"({"video_id":"v","frame_index":0,"label":"normal","text":"a b"})"
                     "\n"
                     R"({"video_id":"v","frame_index":1,"label":"normal","text":"a b c d"})"
                     "\n");
  o.require(caption_stats(corpus).avg_len == 3.0, "caption_stats avg_len");
  if (o.pass)
    o.detail = "attention, sigmoid, softmax, avg_len";
  return o;
}

Outcome golden_explanation() {
  Outcome o;
  std::ifstream in(std::filesystem::path(TBVAD_SOURCE_DIR) / "tests" / "golden" /
                       "explanation.txt",
                   std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  o.require(!ss.str().empty(), "golden file missing");
  auto rec = testing::golden_record();
  o.require(generate_explanation(rec, nullptr) == ss.str(), "template output differs");
  if (o.pass)
    o.detail = "byte-identical";
  return o;
}

} // namespace

int main() {
  log::set_level(log::Level::error);
  const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria = {
      {"metrics match oracles", metrics_vs_oracles},
      {"full gradient check", gradient_check},
      {"reasoning branch", reasoning_branch},
      {"counterfactual margins", margins},
      {"synthetic end to end", end_to_end},
      {"determinism and round trips", determinism},
      {"hand-computed values", hand_checks},
      {"golden explanation", golden_explanation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception &e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
