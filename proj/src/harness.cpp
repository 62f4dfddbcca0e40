// SPDX-License-Identifier: Apache-2.0
#include "tbvad/harness.hpp"

#include <cstdio>
#include <sstream>

#include "tbvad/error.hpp"
#include "tbvad/hashing.hpp"
#include "tbvad/log.hpp"

namespace tbvad {

using nlohmann::json;

json PipelineConfig::to_json() const {
  return {{"embedder",
           {{"backend", std::string(to_string(embedder.backend))},
            {"dim", embedder.dim},
            {"max_tokens", embedder.max_tokens},
            {"knowledge_max_tokens", embedder.knowledge_max_tokens},
            {"endpoint", embedder.endpoint ? json(*embedder.endpoint) : json(nullptr)},
            {"seed", embedder.seed}}},
          {"model", model.to_json()},
          {"train",
           {{"learning_rate", train.learning_rate},
            {"epochs", train.epochs},
            {"batch_size", train.batch_size},
            {"seed", train.seed},
            {"l2_weight", train.l2_weight},
            {"freeze_importance_net", train.freeze_importance_net},
            {"head_only", train.head_only},
            {"max_grad_norm", train.max_grad_norm},
            {"optimizer", to_string(train.optimizer)},
            {"adam_beta1", train.adam_beta1},
            {"adam_beta2", train.adam_beta2},
            {"adam_eps", train.adam_eps}}},
          {"prompts", prompts_to_json(prompts)},
          {"threshold", threshold},
          {"frame_level_auc", frame_level_auc}};
}

std::string PipelineConfig::digest() const { return sha256_hex(to_json().dump()); }

json MetricsReport::to_json() const {
  json j = {{"dataset_tag", dataset_tag},
            {"threshold", threshold},
            {"n_pos", n_pos},
            {"n_neg", n_neg},
            {"config_digest", config_digest}};
  j["auc"] = auc ? json(*auc) : json(nullptr);
  j["ap"] = ap ? json(*ap) : json(nullptr);
  j["acc"] = acc ? json(*acc) : json(nullptr);
  return j;
}

std::string MetricsReport::to_text() const {
  auto fmt = [](const std::optional<double> &v) {
    if (!v)
      return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  std::vector<std::pair<std::string, std::string>> rows = {
      {"dataset", dataset_tag.empty() ? "-" : dataset_tag},
      {"auc", fmt(auc)},
      {"ap", fmt(ap)},
      {"acc", fmt(acc)},
      {"threshold", fmt(threshold)},
      {"n_pos", std::to_string(n_pos)},
      {"n_neg", std::to_string(n_neg)},
      {"config", config_digest.substr(0, 16)}};
  std::ostringstream os;
  for (const auto &[k, v] : rows) {
    std::string key = k;
    key.resize(10, ' ');
    os << key << v << '\n';
  }
  return os.str();
}

FittedPipeline fit_pipeline(const CaptionCorpus &train_corpus,
                            const PipelineConfig &cfg, const AspectSet &active,
                            Summarizer &summarizer, const Embedder &embedder) {
  auto [normal, abnormal] = group_by_class(train_corpus);
  FittedPipeline out;
  out.kb = build_knowledge(normal, abnormal, cfg.prompts, cfg.embedder, active,
                           summarizer);
  ModelConfig mc = cfg.model;
  mc.aspects = out.kb.aspects;
  out.model = train(train_corpus, out.kb, mc, cfg.train, embedder, &out.report);
  return out;
}

MetricsReport evaluate(const CaptionCorpus &test, const KnowledgeBase &kb,
                       const ModelParams &model, const Embedder &embedder,
                       const PipelineConfig &cfg) {
  if (test.videos.empty())
    throw ValidationError("evaluation corpus is empty");
  const KnowledgeContext kctx = make_knowledge_context(kb, embedder);
  std::vector<double> scores(test.videos.size());
  std::vector<int> labels(test.videos.size());
  for (std::size_t i = 0; i < test.videos.size(); ++i) {
    const auto &v = test.videos[i];
    scores[i] = predict_video(v, kctx, model, embedder, kb.embedder.max_tokens).y;
    labels[i] = v.label == Label::abnormal ? 1 : 0;
  }

  MetricsReport r;
  r.dataset_tag = test.source_tag;
  r.threshold = cfg.threshold;
  r.config_digest = cfg.digest();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (labels[i] ? r.n_pos : r.n_neg) += 1;
    r.video_scores.emplace_back(test.videos[i].video_id, scores[i]);
  }
  if (r.n_pos > 0 && r.n_neg > 0) {
    if (cfg.frame_level_auc) {
      std::vector<double> fs;
      std::vector<int> fl;
      for (std::size_t i = 0; i < scores.size(); ++i)
        for (std::size_t c = 0; c < test.videos[i].captions.size(); ++c) {
          fs.push_back(scores[i]);
          fl.push_back(labels[i]);
        }
      r.auc = roc_auc(fs, fl);
    } else {
      r.auc = roc_auc(scores, labels);
    }
  }
  if (r.n_pos > 0)
    r.ap = average_precision(scores, labels);
  r.acc = accuracy(scores, labels, cfg.threshold);
  return r;
}

std::vector<AspectSet> table3_combos() {
  using A = Aspect;
  std::vector<AspectSet> combos = {
      {A::action, A::context},
      {A::action},
      {A::action, A::object},
      {A::context, A::action, A::object},
      {A::action, A::environment},
      all_aspects(),
      {A::object, A::environment},
  };
  for (auto &c : combos)
    c = make_aspect_set(c);
  return combos;
}

std::vector<AspectSet> parse_combos(std::string_view text) {
  std::vector<AspectSet> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos)
      end = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, end - pos);
    if (auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      try {
        out.push_back(make_aspect_set(parse_aspect_list(line)));
      } catch (const ValidationError &e) {
        throw ValidationError("combo line " + std::to_string(line_no) + ": " +
                              e.what());
      }
    }
    pos = end + 1;
  }
  if (out.empty())
    throw ValidationError("combo list is empty");
  return out;
}

std::vector<AblationRow> ablate_slots(const CaptionCorpus &train_corpus,
                                      const CaptionCorpus &test_corpus,
                                      const std::vector<AspectSet> &combos,
                                      const PipelineConfig &cfg,
                                      Summarizer &summarizer,
                                      const Embedder &embedder) {
  if (combos.empty())
    throw ValidationError("ablation needs at least one combination");
  std::vector<AblationRow> rows;
  for (const auto &combo : combos) {
    AblationRow row;
    row.aspects = combo;
    try {
      if (combo.empty())
        throw ValidationError("empty aspect combination");
      row.aspects = make_aspect_set(combo);
      const FittedPipeline fit =
          fit_pipeline(train_corpus, cfg, row.aspects, summarizer, embedder);
      const MetricsReport m = evaluate(test_corpus, fit.kb, fit.model, embedder, cfg);
      if (!m.auc || !m.ap)
        throw ValidationError("test corpus lacks one of the two classes");
      row.auc = *m.auc;
      row.ap = *m.ap;
    } catch (const std::exception &e) {
      row.failed = true;
      row.error = e.what();
      log::warn("ablation row " + join_aspects(combo, "+") + " failed: " + e.what());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow> &rows) {
  std::string out = "aspects,auc,ap\n";
  char buf[64];
  for (const auto &r : rows) {
    out += join_aspects(r.aspects, "+");
    if (r.failed) {
      out += ",,\n";
      continue;
    }
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", r.auc, r.ap);
    out += buf;
  }
  return out;
}

MetricsReport cross_eval(const CaptionCorpus &train_corpus,
                         const CaptionCorpus &test_corpus,
                         const PipelineConfig &cfg, Summarizer &summarizer,
                         const Embedder &embedder, bool allow_same_source) {
  if (!allow_same_source && train_corpus.source_tag == test_corpus.source_tag)
    throw ValidationError("cross evaluation needs distinct source tags, both are '" +
                          train_corpus.source_tag + "'");
  const FittedPipeline fit =
      fit_pipeline(train_corpus, cfg, cfg.model.aspects, summarizer, embedder);
  return evaluate(test_corpus, fit.kb, fit.model, embedder, cfg);
}

ExplanationRecord explain_video(const VideoRecord &video, const KnowledgeBase &kb,
                                const ModelParams &model, const Embedder &embedder,
                                const ExplainOptions &opts) {
  if (opts.topk == 0)
    throw ValidationError("topk must be at least 1");
  const Prediction pred = predict_video(video, kb, model, embedder);
  const Label label = label_for_score(pred.y);
  const auto attention = model.config.attention;
  const SlotImportance imp =
      class_importance(pred.h, kb, label, model.importance, attention);

  std::map<Aspect, double> weights;
  for (std::size_t s = 0; s < kb.aspects.size(); ++s)
    weights[kb.aspects[s]] = imp.w[s];
  const Vector h_bar = mean_pool(pred.h);
  auto evidences = retrieve_evidence(h_bar, kb, label, imp, opts.topk);
  std::map<Aspect, double> margins;
  if (opts.counterfactual)
    margins = counterfactual_margins(pred.h, kb, model.importance, label, attention);

  ExplanationRecord r = build_record(video.video_id, pred.y, weights,
                                     std::move(evidences), std::move(margins), {},
                                     model.digest());
  r.rationale = generate_explanation(r, opts.generator);
  r.validate();
  return r;
}

} // namespace tbvad
