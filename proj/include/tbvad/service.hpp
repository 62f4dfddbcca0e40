// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tbvad {

struct HttpOptions {
  int timeout_ms = 30000;
  int max_attempts = 3;
  int backoff_ms = 100;

  /// Defaults, with timeout taken from TBVAD_HTTP_TIMEOUT_MS when set.
  static HttpOptions from_env();
};

/// POSTs a JSON body to `endpoint + path` and returns the parsed reply.
/// Connection failures, timeouts and non-200 replies are retried; the last
/// failure is rethrown as RetriableError carrying the attempt count.
nlohmann::json post_json(const std::string &endpoint, std::string_view path,
                         const nlohmann::json &body, const HttpOptions &opts);

/// One-file-per-key store. Writes go to a temporary file that is renamed
/// into place, so readers never see a partial entry.
class DiskCache {
public:
  explicit DiskCache(std::filesystem::path dir);

  /// TBVAD_CACHE_DIR when set, otherwise no cache.
  static std::optional<std::filesystem::path> dir_from_env();

  std::optional<std::string> get(std::string_view key) const;
  void put(std::string_view key, std::string_view bytes) const;
  const std::filesystem::path &dir() const noexcept { return dir_; }

private:
  std::filesystem::path file_for(std::string_view key) const;
  std::filesystem::path dir_;
};

/// Cache payload for an embedding: 8-byte little-endian count followed by
/// that many little-endian float32 values.
std::string encode_float_vector(const std::vector<float> &v);
std::vector<float> decode_float_vector(std::string_view bytes);

/// Text generation contract shared by the summarizer and the explanation
/// generator.
class Generator {
public:
  virtual ~Generator() = default;
  virtual std::string generate(const std::string &prompt,
                               int max_new_tokens) = 0;
};

/// POST {endpoint}/generate with {"prompt", "max_new_tokens"} -> {"text"}.
class RemoteGenerator : public Generator {
public:
  RemoteGenerator(std::string endpoint,
                  std::optional<std::filesystem::path> cache_dir,
                  HttpOptions opts = HttpOptions::from_env());
  std::string generate(const std::string &prompt, int max_new_tokens) override;

private:
  std::string endpoint_;
  std::optional<DiskCache> cache_;
  HttpOptions opts_;
};

} // namespace tbvad
