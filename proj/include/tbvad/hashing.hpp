// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tbvad {

/// Lower-case hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// 64-bit FNV-1a, mixed with a seed through splitmix64.
std::uint64_t hash64(std::string_view bytes, std::uint64_t seed);

std::uint64_t splitmix64(std::uint64_t x);

/// Seeded generator whose output is identical on every platform:
/// mt19937_64 is fully specified, and the distributions below avoid the
/// implementation-defined std:: distribution algorithms.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <class T> void shuffle(std::vector<T> &v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[below(i)]);
  }
  template <class T> const T &pick(std::span<const T> items) {
    return items[below(items.size())];
  }

private:
  std::mt19937_64 engine_;
};

} // namespace tbvad
