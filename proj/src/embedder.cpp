// SPDX-License-Identifier: Apache-2.0
#include "tbvad/embedder.hpp"

#include <cmath>
#include <future>
#include <map>
#include <unordered_map>

#include "tbvad/error.hpp"
#include "tbvad/hashing.hpp"
#include "tbvad/log.hpp"
#include "tbvad/service.hpp"

namespace tbvad {

using nlohmann::json;

TokenEmbeddingSeq::TokenEmbeddingSeq(Matrix v, std::vector<bool> m)
    : vectors(std::move(v)), mask(std::move(m)) {
  if (mask.size() != vectors.rows())
    throw ValidationError("mask length does not match sequence length");
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (!mask[t])
      for (double &x : vectors.row_span(t))
        x = 0.0;
}

std::size_t TokenEmbeddingSeq::active() const {
  std::size_t n = 0;
  for (bool b : mask)
    n += b;
  return n;
}

void EmbedderConfig::validate() const {
  if (dim == 0)
    throw ValidationError("embedder dim must be positive");
  if (max_tokens == 0 || knowledge_max_tokens == 0)
    throw ValidationError("embedder max_tokens must be positive");
  if (backend == EmbedBackend::remote && (!endpoint || endpoint->empty()))
    throw ValidationError("remote embedder requires an endpoint");
  if (max_in_flight == 0)
    throw ValidationError("embedder max_in_flight must be positive");
}

std::string_view to_string(EmbedBackend b) {
  return b == EmbedBackend::hash ? "hash" : "remote";
}

EmbedBackend parse_backend(std::string_view s) {
  if (s == "hash")
    return EmbedBackend::hash;
  if (s == "remote")
    return EmbedBackend::remote;
  throw ValidationError("unknown embedder backend '" + std::string(s) + "'");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty())
    tokens.push_back(std::move(cur));
  return tokens;
}

namespace {

std::vector<std::string> truncated_tokens(std::string_view text,
                                          std::size_t max_tokens) {
  auto tokens = tokenize(text);
  if (tokens.empty())
    throw ValidationError("text has no tokens to embed");
  if (tokens.size() > max_tokens)
    tokens.resize(max_tokens);
  return tokens;
}

} // namespace

HashEmbedder::HashEmbedder(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim == 0)
    throw ValidationError("embedder dim must be positive");
}

Vector HashEmbedder::token_vector(std::string_view token) const {
  constexpr std::size_t kProbes = 4;
  Vector v(dim_, 0.0);
  const std::uint64_t base = splitmix64(seed_);
  for (std::size_t j = 0; j < kProbes; ++j) {
    const std::uint64_t h = hash64(token, base + j);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v[h % dim_] += sign;
  }
  double norm = l2_norm(v);
  if (norm == 0.0) {
    // every probe cancelled out
    v[hash64(token, base) % dim_] = 1.0;
    norm = 1.0;
  }
  for (double &x : v)
    x /= norm;
  return v;
}

TokenEmbeddingSeq HashEmbedder::embed_tokens(std::string_view text,
                                             std::size_t max_tokens) const {
  const auto tokens = truncated_tokens(text, max_tokens);
  Matrix m(tokens.size(), dim_);
  std::unordered_map<std::string_view, std::size_t> first;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    auto [it, fresh] = first.try_emplace(tokens[t], t);
    if (fresh) {
      const auto v = token_vector(tokens[t]);
      std::copy(v.begin(), v.end(), m.row_span(t).begin());
    } else {
      const auto src = m.row_span(it->second);
      std::copy(src.begin(), src.end(), m.row_span(t).begin());
    }
  }
  return TokenEmbeddingSeq(std::move(m));
}

RemoteEmbedder::RemoteEmbedder(const EmbedderConfig &cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.backend != EmbedBackend::remote)
    throw ValidationError("RemoteEmbedder needs a remote backend config");
}

TokenEmbeddingSeq RemoteEmbedder::embed_tokens(std::string_view text,
                                               std::size_t max_tokens) const {
  const auto tokens = truncated_tokens(text, max_tokens);
  std::optional<DiskCache> cache;
  if (cfg_.cache_dir)
    cache.emplace(*cfg_.cache_dir);
  auto key_for = [&](const std::string &tok) {
    return "embed\n" + *cfg_.endpoint + "\n" + std::to_string(cfg_.dim) + "\n" +
           tok;
  };

  std::map<std::string, std::vector<float>> found;
  std::vector<std::string> missing;
  for (const auto &tok : tokens) {
    if (found.count(tok))
      continue;
    if (cache)
      if (auto hit = cache->get(key_for(tok))) {
        auto v = decode_float_vector(*hit);
        if (v.size() == cfg_.dim) {
          found.emplace(tok, std::move(v));
          continue;
        }
        log::warn("ignoring embedding cache entry with wrong dimension");
      }
    found.emplace(tok, std::vector<float>{});
    missing.push_back(tok);
  }

  const HttpOptions opts = HttpOptions::from_env();
  auto fetch = [&](std::size_t begin, std::size_t end) {
    json texts = json::array();
    for (std::size_t i = begin; i < end; ++i)
      texts.push_back(missing[i]);
    const json reply = post_json(*cfg_.endpoint, "/embed",
                                 {{"texts", texts}, {"dim", cfg_.dim}}, opts);
    if (!reply.contains("vectors") || !reply["vectors"].is_array())
      throw Error("embedding reply lacks a \"vectors\" array");
    if (reply.contains("dim") && reply["dim"] != cfg_.dim)
      throw ValidationError("embedding service returned dim " +
                            reply["dim"].dump() + ", expected " +
                            std::to_string(cfg_.dim));
    const auto &vecs = reply["vectors"];
    if (vecs.size() != end - begin)
      throw Error("embedding service returned " + std::to_string(vecs.size()) +
                  " vectors for " + std::to_string(end - begin) + " texts");
    std::vector<std::vector<float>> out;
    for (const auto &row : vecs) {
      if (!row.is_array() || row.size() != cfg_.dim)
        throw ValidationError("embedding vector dimension mismatch: expected " +
                              std::to_string(cfg_.dim));
      std::vector<float> v;
      for (const auto &x : row) {
        if (!x.is_number())
          throw Error("embedding vector holds a non-number");
        v.push_back(x.get<float>());
      }
      out.push_back(std::move(v));
    }
    return out;
  };

  // Bounded parallel fetch: at most max_in_flight batches at a time.
  std::size_t next = 0;
  while (next < missing.size()) {
    std::vector<std::pair<std::size_t, std::future<std::vector<std::vector<float>>>>>
        wave;
    for (std::size_t k = 0; k < cfg_.max_in_flight && next < missing.size();
         ++k) {
      const std::size_t end = std::min(next + kBatchSize, missing.size());
      wave.emplace_back(next, std::async(std::launch::async, fetch, next, end));
      next = end;
    }
    for (auto &[begin, fut] : wave) {
      auto vecs = fut.get();
      for (std::size_t i = 0; i < vecs.size(); ++i) {
        const auto &tok = missing[begin + i];
        if (cache)
          cache->put(key_for(tok), encode_float_vector(vecs[i]));
        found[tok] = std::move(vecs[i]);
      }
    }
  }

  Matrix m(tokens.size(), cfg_.dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto &v = found.at(tokens[t]);
    for (std::size_t j = 0; j < cfg_.dim; ++j)
      m(t, j) = v[j];
  }
  if (!m.all_finite())
    throw Error("embedding service returned non-finite values");
  return TokenEmbeddingSeq(std::move(m));
}

std::unique_ptr<Embedder> make_embedder(const EmbedderConfig &cfg) {
  cfg.validate();
  if (cfg.backend == EmbedBackend::hash)
    return std::make_unique<HashEmbedder>(cfg.dim, cfg.seed);
  return std::make_unique<RemoteEmbedder>(cfg);
}

TokenEmbeddingSeq embed_tokens(std::string_view text, const EmbedderConfig &cfg) {
  return make_embedder(cfg)->embed_tokens(text, cfg.max_tokens);
}

Vector mean_pool(const TokenEmbeddingSeq &seq) {
  Vector out(seq.dim(), 0.0);
  std::size_t n = 0;
  for (std::size_t t = 0; t < seq.length(); ++t) {
    if (!seq.mask[t])
      continue;
    axpy(1.0, seq.vectors.row_span(t), out);
    ++n;
  }
  if (n == 0)
    throw ValidationError("mean_pool over a fully masked sequence");
  for (double &x : out)
    x /= static_cast<double>(n);
  return out;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw ValidationError("cosine_similarity: length mismatch (" +
                          std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()) + ")");
  for (std::size_t i = 0; i < u.size(); ++i)
    if (!std::isfinite(u[i]) || !std::isfinite(v[i]))
      throw ValidationError("cosine_similarity: non-finite input");
  const double nu = l2_norm(u), nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0) {
    log::warn("cosine similarity with a zero-norm vector; using 0");
    return 0.0;
  }
  double c = dot(u, v) / (nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

} // namespace tbvad
