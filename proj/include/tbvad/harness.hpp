// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbvad/classifier.hpp"
#include "tbvad/knowledge.hpp"
#include "tbvad/metrics.hpp"
#include "tbvad/reasoning.hpp"

namespace tbvad {

/// Everything needed to go from captions to a trained detector.
struct PipelineConfig {
  EmbedderConfig embedder;
  ModelConfig model;
  TrainConfig train;
  std::vector<AspectPrompt> prompts = default_prompts();
  double threshold = 0.5;
  /// Expand each video's score to all of its captions before computing AUC.
  bool frame_level_auc = false;

  nlohmann::json to_json() const;
  /// SHA-256 of the canonical JSON above.
  std::string digest() const;
};

struct MetricsReport {
  std::string dataset_tag;
  std::optional<double> auc, ap, acc;
  double threshold = 0.5;
  std::size_t n_pos = 0, n_neg = 0;
  std::string config_digest;
  std::vector<std::pair<std::string, double>> video_scores;

  nlohmann::json to_json() const;
  /// Aligned two-column table.
  std::string to_text() const;
};

struct FittedPipeline {
  KnowledgeBase kb;
  ModelParams model;
  TrainReport report;
};

/// Builds knowledge for `active` from the training corpus only, then trains.
FittedPipeline fit_pipeline(const CaptionCorpus &train_corpus,
                            const PipelineConfig &cfg, const AspectSet &active,
                            Summarizer &summarizer, const Embedder &embedder);

/// Scores every video and fills whichever metrics are defined for the
/// label mix (AUC needs both classes, AP needs a positive).
MetricsReport evaluate(const CaptionCorpus &test, const KnowledgeBase &kb,
                       const ModelParams &model, const Embedder &embedder,
                       const PipelineConfig &cfg);

struct AblationRow {
  AspectSet aspects;
  double auc = 0.0;
  double ap = 0.0;
  bool failed = false;
  std::string error;
};

/// The seven knowledge combinations reported for the slot ablation.
std::vector<AspectSet> table3_combos();
/// One combination per line, aspects separated by ',' or '+'; '#' comments.
std::vector<AspectSet> parse_combos(std::string_view text);

/// For each combination, in order: rebuild knowledge, retrain with the
/// configured seed, evaluate. A failing row is marked and the sweep goes on.
std::vector<AblationRow> ablate_slots(const CaptionCorpus &train_corpus,
                                      const CaptionCorpus &test_corpus,
                                      const std::vector<AspectSet> &combos,
                                      const PipelineConfig &cfg,
                                      Summarizer &summarizer,
                                      const Embedder &embedder);

/// Header "aspects,auc,ap"; aspects joined with '+'; failed rows have
/// empty metric fields.
std::string ablation_csv(const std::vector<AblationRow> &rows);

/// Train on one domain, test on another. Knowledge comes from the training
/// corpus. Refuses equal source tags unless `allow_same_source` is set.
MetricsReport cross_eval(const CaptionCorpus &train_corpus,
                         const CaptionCorpus &test_corpus,
                         const PipelineConfig &cfg, Summarizer &summarizer,
                         const Embedder &embedder, bool allow_same_source = false);

struct ExplainOptions {
  std::size_t topk = 2;
  bool counterfactual = false;
  Generator *generator = nullptr; // template rationale when null
};

ExplanationRecord explain_video(const VideoRecord &video, const KnowledgeBase &kb,
                                const ModelParams &model, const Embedder &embedder,
                                const ExplainOptions &opts);

} // namespace tbvad
