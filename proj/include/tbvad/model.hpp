// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tbvad/embedder.hpp"
#include "tbvad/encoder.hpp"
#include "tbvad/knowledge.hpp"
#include "tbvad/reasoning.hpp"

namespace tbvad {

inline constexpr int kModelFormatVersion = 1;

/// Architecture and provenance snapshot stored in the model header.
struct ModelConfig {
  EncoderConfig encoder;
  std::size_t importance_hidden = 64;
  AspectSet aspects = all_aspects();
  std::size_t frames = 8;
  AttentionNorm attention = AttentionNorm::none;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;
  EmbedBackend embed_backend = EmbedBackend::hash;
  std::size_t embed_dim = 64;
  std::uint64_t embed_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json &j);
};

struct TensorRef {
  std::string name;
  Matrix *tensor;
  bool decay; // included in the L2 penalty
};

/// Every trainable tensor of the detector.
struct ModelParams {
  ModelConfig config;
  EncoderParams encoder; // includes W_d, b_d
  Matrix w_v, b_v;       // knowledge projection, d_latent x d
  Matrix fusion_w;       // 1 x 2*d_latent, [description; knowledge]
  Matrix fusion_b;       // 1 x 1
  ImportanceNet importance;
  Matrix gate;           // 1 x 1, scales the importance-weighted residual

  static ModelParams zeros(const ModelConfig &cfg);
  static ModelParams init(const ModelConfig &cfg);

  /// Tensors in serialization order.
  std::vector<TensorRef> tensors();
  std::vector<std::pair<std::string, const Matrix *>> tensors() const;

  bool all_finite() const;
  std::size_t parameter_count() const;
  /// SHA-256 of the serialized model.
  std::string digest() const;
};

/// Binary container:
///   8-byte magic "TBVADMDL", u32 header length, JSON header
///   {"format_version", "dtype", "config", "tensors": [{name, rows, cols}]},
///   then per tensor: u32 name length, name, u64 rows, u64 cols,
///   rows*cols little-endian float64 values.
std::string serialize_model(const ModelParams &m);
ModelParams deserialize_model(std::string_view bytes);
void save_model(const ModelParams &m, const std::filesystem::path &path);
ModelParams load_model(const std::filesystem::path &path);

} // namespace tbvad
