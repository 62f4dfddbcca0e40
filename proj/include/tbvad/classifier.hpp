// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "tbvad/embedder.hpp"
#include "tbvad/knowledge.hpp"
#include "tbvad/model.hpp"
#include "tbvad/textcorpus.hpp"

namespace tbvad {

enum class Optimizer { sgd, adam };

std::string_view to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view s);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double l2_weight = 1e-4;
  /// Disables the importance-weighted residual; f and the gate stay fixed.
  bool freeze_importance_net = false;
  /// Only the fusion head (W, b) is updated; with fixed features the
  /// objective is convex.
  bool head_only = false;
  /// Rescales the batch gradient when its global L2 norm exceeds this;
  /// 0 disables clipping.
  double max_grad_norm = 1.0;
  /// sgd: p -= lr * g. adam: bias-corrected moment estimates.
  Optimizer optimizer = Optimizer::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

double sigmoid(double x);

/// y = sigmoid(W [P_d; P_V] + b).
double fuse_classify(std::span<const double> p_d, std::span<const double> p_v,
                     const ModelParams &model);

/// Class-agnostic knowledge inputs shared by every video: the mean of the
/// two prototype matrices (slot attention during training) and the mean of
/// the two pooled knowledge embeddings (P_V is affine, so projecting it
/// equals averaging the two encodings).
struct KnowledgeContext {
  Matrix mean_prototype;
  Vector pooled_mean;
};

KnowledgeContext make_knowledge_context(const KnowledgeBase &kb,
                                        const Embedder &embedder);

/// One embedded caption per sampled frame: each caption's tokens are
/// embedded and mean-pooled into a single row.
TokenEmbeddingSeq embed_video(const VideoRecord &video, const Embedder &embedder,
                              std::size_t frames, std::size_t max_tokens);

struct Sample {
  TokenEmbeddingSeq x;
  double label = 0.0;
};

struct ForwardOutput {
  double logit = 0.0;
  double y = 0.0;
  double loss = 0.0; // BCE for this sample, without the L2 term
  TokenEmbeddingSeq h;
  Vector h_bar, p_d, p_v;
};

/// Full forward pass for one sample. When `grads` is non-null, dLoss/dParams
/// scaled by `grad_scale` is accumulated into it.
ForwardOutput forward_backward(const ModelParams &model, const Sample &sample,
                               const KnowledgeContext &kctx, bool use_residual,
                               ModelParams *grads = nullptr,
                               double grad_scale = 1.0);

/// Mean BCE over the batch plus (l2/2) * sum of squared decayed weights.
/// Fills `grads` (which must be shaped like `model`) when non-null.
double objective(const ModelParams &model, std::span<const Sample> batch,
                 const KnowledgeContext &kctx, const TrainConfig &cfg,
                 ModelParams *grads = nullptr);

struct Prediction {
  double y = 0.0;
  Vector p_d;
  TokenEmbeddingSeq h;
};

Prediction predict_video(const VideoRecord &video, const KnowledgeBase &kb,
                         const ModelParams &model, const Embedder &embedder);
Prediction predict_video(const VideoRecord &video, const KnowledgeContext &kctx,
                         const ModelParams &model, const Embedder &embedder,
                         std::size_t max_tokens);

struct TrainReport {
  /// Objective over the full training set after each epoch.
  std::vector<double> epoch_loss;
};

/// Mini-batch training (Adam or SGD) on video-level BCE. Per-video passes of a batch run in
/// parallel; gradients are summed in batch order so results do not depend
/// on the thread count.
ModelParams train(const CaptionCorpus &corpus, const KnowledgeBase &kb,
                  const ModelConfig &model_cfg, const TrainConfig &cfg,
                  const Embedder &embedder, TrainReport *report = nullptr);

/// Same loop over pre-embedded samples, starting from `init`.
ModelParams train_samples(ModelParams init, std::span<const Sample> samples,
                          const KnowledgeContext &kctx, const TrainConfig &cfg,
                          TrainReport *report = nullptr);

} // namespace tbvad
