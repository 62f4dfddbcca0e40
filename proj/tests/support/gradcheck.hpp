// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tbvad/classifier.hpp"
#include "tbvad/hashing.hpp"

namespace tbvad::testing {

struct GroupError {
  std::string name;
  double rel = 0.0;
  double analytic_norm = 0.0;
};

/// Central differences over every scalar of every tensor, compared per
/// tensor as |a - n| / max(|a|, |n|, floor) in the Euclidean norm. The
/// floor only matters for tensors whose gradient is identically zero (key
/// biases and the score bias, by softmax shift invariance), where the
/// numeric side is pure rounding noise.
inline constexpr double kZeroGradientFloor = 1e-6;

inline std::vector<GroupError> gradient_check(const ModelParams &model,
                                              std::span<const Sample> samples,
                                              const KnowledgeContext &kctx,
                                              const TrainConfig &cfg,
                                              double eps = 1e-5) {
  ModelParams grads = ModelParams::zeros(model.config);
  objective(model, samples, kctx, cfg, &grads);
  ModelParams probe = model;
  auto pt = probe.tensors();
  auto gt = grads.tensors();
  std::vector<GroupError> out;
  for (std::size_t k = 0; k < pt.size(); ++k) {
    auto values = pt[k].tensor->flat();
    auto analytic = gt[k].tensor->flat();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = objective(probe, samples, kctx, cfg);
      values[i] = saved - eps;
      const double down = objective(probe, samples, kctx, cfg);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom =
        std::max({std::sqrt(a2), std::sqrt(n2), kZeroGradientFloor});
    out.push_back({pt[k].name, std::sqrt(diff2) / denom,
                   std::sqrt(a2)});
  }
  return out;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng &rng,
                            double scale = 1.0) {
  Matrix m(r, c);
  for (double &v : m.flat())
    v = rng.uniform(-scale, scale);
  return m;
}

/// d_model 8, T 4, two videos (one with a padded frame), every parameter
/// group live: gate away from zero so the importance net receives gradient.
struct GradInstance {
  ModelParams model;
  std::vector<Sample> samples;
  KnowledgeContext kctx;
  TrainConfig cfg;
};

inline GradInstance small_grad_instance(std::uint64_t seed,
                                        AttentionNorm norm = AttentionNorm::none) {
  ModelConfig mc;
  mc.encoder = {2, 2, 8, 16, 6};
  mc.importance_hidden = 5;
  mc.embed_dim = 8;
  mc.frames = 4;
  mc.attention = norm;
  mc.init_seed = seed;
  GradInstance g;
  g.model = ModelParams::init(mc);
  Rng rng(seed + 1);
  for (auto &t : g.model.tensors())
    for (double &v : t.tensor->flat())
      v += rng.uniform(-0.1, 0.1);
  g.model.gate(0, 0) = 0.8;
  g.samples.push_back({TokenEmbeddingSeq(random_matrix(4, 8, rng)), 1.0});
  g.samples.push_back(
      {TokenEmbeddingSeq(random_matrix(4, 8, rng), {true, true, true, false}), 0.0});
  g.kctx.mean_prototype = random_matrix(4, 8, rng, 0.5);
  const Matrix pooled = random_matrix(1, 8, rng, 0.5);
  g.kctx.pooled_mean.assign(pooled.flat().begin(), pooled.flat().end());
  g.cfg.l2_weight = 1e-3;
  return g;
}

} // namespace tbvad::testing
