// SPDX-License-Identifier: Apache-2.0
#include "tbvad/service.hpp"

#include <bit>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "tbvad/error.hpp"
#include "tbvad/hashing.hpp"

namespace tbvad {

using nlohmann::json;

HttpOptions HttpOptions::from_env() {
  HttpOptions opts;
  if (const char *t = std::getenv("TBVAD_HTTP_TIMEOUT_MS")) {
    try {
      opts.timeout_ms = std::stoi(t);
    } catch (const std::exception &) {
      throw ValidationError("TBVAD_HTTP_TIMEOUT_MS is not an integer: " +
                            std::string(t));
    }
    if (opts.timeout_ms <= 0)
      throw ValidationError("TBVAD_HTTP_TIMEOUT_MS must be positive");
  }
  return opts;
}

namespace {

// "http://host:port/prefix" -> ("http://host:port", "/prefix")
std::pair<std::string, std::string> split_endpoint(const std::string &url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos)
    throw ValidationError("endpoint must include a scheme: " + url);
  auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos)
    return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/')
    prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

} // namespace

json post_json(const std::string &endpoint, std::string_view path,
               const json &body, const HttpOptions &opts) {
  const auto [base, prefix] = split_endpoint(endpoint);
  const std::string target = prefix + std::string(path);
  const std::string payload = body.dump();
  std::string last_error;
  const int attempts = std::max(1, opts.max_attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Client client(base);
    const auto ms = std::chrono::milliseconds(opts.timeout_ms);
    client.set_connection_timeout(ms);
    client.set_read_timeout(ms);
    client.set_write_timeout(ms);
    auto res = client.Post(target, payload, "application/json");
    if (!res) {
      last_error = "POST " + endpoint + std::string(path) +
                   " failed: " + httplib::to_string(res.error());
    } else if (res->status != 200) {
      last_error = "POST " + endpoint + std::string(path) + " returned HTTP " +
                   std::to_string(res->status);
    } else {
      try {
        return json::parse(res->body);
      } catch (const json::parse_error &e) {
        throw Error("malformed JSON reply from " + endpoint +
                    std::string(path) + ": " + e.what());
      }
    }
    if (attempt < attempts)
      std::this_thread::sleep_for(
          std::chrono::milliseconds(opts.backoff_ms * attempt));
  }
  throw RetriableError(last_error, attempts);
}

DiskCache::DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::optional<std::filesystem::path> DiskCache::dir_from_env() {
  if (const char *d = std::getenv("TBVAD_CACHE_DIR"); d && *d)
    return std::filesystem::path(d);
  return std::nullopt;
}

std::filesystem::path DiskCache::file_for(std::string_view key) const {
  return dir_ / sha256_hex(key);
}

std::optional<std::string> DiskCache::get(std::string_view key) const {
  std::ifstream in(file_for(key), std::ios::binary);
  if (!in)
    return std::nullopt;
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void DiskCache::put(std::string_view key, std::string_view bytes) const {
  const auto final_path = file_for(key);
  std::ostringstream suffix;
  suffix << ".tmp." << std::this_thread::get_id();
  auto tmp = final_path;
  tmp += suffix.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error("cannot write cache file " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw Error("short write to cache file " + tmp.string());
  }
  std::filesystem::rename(tmp, final_path);
}

namespace {

template <class T> T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

} // namespace

std::string encode_float_vector(const std::vector<float> &v) {
  std::string out(8 + 4 * v.size(), '\0');
  const std::uint64_t n = to_little<std::uint64_t>(v.size());
  std::memcpy(out.data(), &n, 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float f = to_little(v[i]);
    std::memcpy(out.data() + 8 + 4 * i, &f, 4);
  }
  return out;
}

std::vector<float> decode_float_vector(std::string_view bytes) {
  if (bytes.size() < 8)
    throw CorruptFileError("embedding cache entry shorter than its header",
                           bytes.size());
  std::uint64_t n;
  std::memcpy(&n, bytes.data(), 8);
  n = to_little(n);
  if (bytes.size() != 8 + 4 * n)
    throw CorruptFileError("embedding cache entry length does not match count",
                           bytes.size());
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 8 + 4 * i, 4);
    v[i] = to_little(f);
  }
  return v;
}

RemoteGenerator::RemoteGenerator(std::string endpoint,
                                 std::optional<std::filesystem::path> cache_dir,
                                 HttpOptions opts)
    : endpoint_(std::move(endpoint)), opts_(opts) {
  if (cache_dir)
    cache_.emplace(*cache_dir);
}

std::string RemoteGenerator::generate(const std::string &prompt,
                                      int max_new_tokens) {
  const std::string key = "generate\n" + endpoint_ + "\n" +
                          std::to_string(max_new_tokens) + "\n" + prompt;
  if (cache_)
    if (auto hit = cache_->get(key))
      return *hit;
  const json reply =
      post_json(endpoint_, "/generate",
                {{"prompt", prompt}, {"max_new_tokens", max_new_tokens}}, opts_);
  if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string())
    throw Error("generation reply from " + endpoint_ + " lacks a \"text\" string");
  std::string text = reply["text"].get<std::string>();
  if (cache_)
    cache_->put(key, text);
  return text;
}

} // namespace tbvad
