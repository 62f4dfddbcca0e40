// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tbvad/tensor.hpp"

namespace tbvad {

/// T x d token embeddings plus a padding mask (true = real token).
/// Masked-out rows are kept all-zero.
struct TokenEmbeddingSeq {
  Matrix vectors;
  std::vector<bool> mask;

  TokenEmbeddingSeq() = default;
  explicit TokenEmbeddingSeq(Matrix v)
      : vectors(std::move(v)), mask(vectors.rows(), true) {}
  TokenEmbeddingSeq(Matrix v, std::vector<bool> m);

  std::size_t length() const noexcept { return vectors.rows(); }
  std::size_t dim() const noexcept { return vectors.cols(); }
  std::size_t active() const;
};

enum class EmbedBackend { hash, remote };

struct EmbedderConfig {
  EmbedBackend backend = EmbedBackend::hash;
  std::size_t dim = 64;
  /// Token budget for caption text.
  std::size_t max_tokens = 512;
  /// Token budget for the concatenated knowledge sequence.
  std::size_t knowledge_max_tokens = 4096;
  std::optional<std::string> endpoint;
  std::optional<std::filesystem::path> cache_dir;
  std::uint64_t seed = 0;
  std::size_t max_in_flight = 4;

  void validate() const;
};

std::string_view to_string(EmbedBackend b);
EmbedBackend parse_backend(std::string_view s);

/// Lower-cased alphanumeric runs; everything else separates tokens.
/// Bytes >= 0x80 count as word characters so UTF-8 words stay intact.
std::vector<std::string> tokenize(std::string_view text);

class Embedder {
public:
  virtual ~Embedder() = default;
  /// Embeds at most `max_tokens` tokens of `text`. Throws ValidationError
  /// when the text has no tokens.
  virtual TokenEmbeddingSeq embed_tokens(std::string_view text,
                                         std::size_t max_tokens) const = 0;
  virtual std::size_t dim() const = 0;
};

/// Each token maps to a unit vector built from seeded signed hash buckets,
/// so equal tokens always embed identically.
class HashEmbedder : public Embedder {
public:
  HashEmbedder(std::size_t dim, std::uint64_t seed);
  TokenEmbeddingSeq embed_tokens(std::string_view text,
                                 std::size_t max_tokens) const override;
  std::size_t dim() const override { return dim_; }
  Vector token_vector(std::string_view token) const;

private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Client for POST {endpoint}/embed. Tokens are sent in batches of at most
/// 64 with up to `max_in_flight` concurrent requests; results are cached
/// on disk by SHA-256 of (endpoint, dim, token).
class RemoteEmbedder : public Embedder {
public:
  explicit RemoteEmbedder(const EmbedderConfig &cfg);
  TokenEmbeddingSeq embed_tokens(std::string_view text,
                                 std::size_t max_tokens) const override;
  std::size_t dim() const override { return cfg_.dim; }

  static constexpr std::size_t kBatchSize = 64;

private:
  EmbedderConfig cfg_;
};

std::unique_ptr<Embedder> make_embedder(const EmbedderConfig &cfg);

/// Convenience wrapper using cfg.max_tokens.
TokenEmbeddingSeq embed_tokens(std::string_view text, const EmbedderConfig &cfg);

/// Mean over unmasked rows.
Vector mean_pool(const TokenEmbeddingSeq &seq);

/// u.v / (|u| |v|); 0.0 (with a warning) when either norm is zero.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

} // namespace tbvad
