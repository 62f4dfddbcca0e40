// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "tbvad/harness.hpp"
#include "tbvad/synth.hpp"

namespace tbvad {

/// Merged settings of one CLI invocation. Loaded from an optional JSON file
/// whose every key is checked; flags are applied on top by the caller.
/// embedder.dim and model.importance_hidden default to encoder.d_model.
///
///   {"embedder": {"backend", "dim", "max_tokens", "knowledge_max_tokens",
///                 "endpoint", "cache_dir", "seed", "max_in_flight"},
///    "encoder":  {"num_layers", "num_heads", "d_model", "ff_dim", "d_latent"},
///    "model":    {"importance_hidden", "frames", "attention"},
///    "train":    {"learning_rate", "epochs", "batch_size", "l2_weight",
///                 "freeze_importance_net", "head_only", "max_grad_norm",
///                 "optimizer", "adam_beta1", "adam_beta2", "adam_eps"},
///    "eval":     {"threshold", "frame_level_auc", "metric"},
///    "explain":  {"topk", "counterfactual"},
///    "paths":    {"captions", "test_captions", "knowledge", "model", "out",
///                 "prompts"},
///    "synth":    {see SynthConfig},
///    "seed", "aspects", "gen_endpoint", "extractive"}
struct RunConfig {
  PipelineConfig pipeline;
  std::uint64_t seed = 0;
  std::optional<std::string> gen_endpoint;
  bool extractive = false;
  std::string metric = "auc";
  std::size_t topk = 2;
  bool counterfactual = false;

  std::optional<std::filesystem::path> captions, test_captions, knowledge,
      model, out, prompts;
  SynthConfig synth;

  static RunConfig from_json(const nlohmann::json &j);
  static RunConfig load(const std::filesystem::path &path);

  /// Propagates shared values (seed, embedder dim and backend, prompts
  /// file) into the nested configs and validates the result.
  void finalize();

  nlohmann::json to_json() const;
  std::string digest() const;
};

} // namespace tbvad
