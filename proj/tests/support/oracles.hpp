// SPDX-License-Identifier: Apache-2.0
// Deliberately naive reference computations. None of these call into the
// library's numeric code.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tbvad/knowledge.hpp"
#include "tbvad/tensor.hpp"

namespace tbvad::oracle {

/// P(pos > neg) + P(tie) / 2 by counting every pair.
inline double auc_pairs(const std::vector<double> &s, const std::vector<int> &y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        if (s[i] > s[j])
          wins += 1.0;
        else if (s[i] == s[j])
          wins += 0.5;
      }
  return wins / pairs;
}

/// Walks every distinct threshold from the top, recounting the whole set
/// each time.
inline double ap_cutpoints(const std::vector<double> &s, const std::vector<int> &y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double total_pos = 0;
  for (int l : y)
    total_pos += l;
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0, predicted = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        predicted += 1;
        tp += y[i];
      }
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / predicted);
    prev_recall = recall;
  }
  return ap;
}

inline double accuracy_count(const std::vector<double> &s, const std::vector<int> &y,
                             double t) {
  int ok = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if ((s[i] >= t) == (y[i] == 1))
      ++ok;
  return static_cast<double>(ok) / static_cast<double>(s.size());
}

inline Matrix matmul(const Matrix &a, const Matrix &b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k)
        acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

inline Matrix transpose(const Matrix &a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      t(j, i) = a(i, j);
  return t;
}

/// A = K H^T / sqrt(d) with masked columns zeroed, C = A H, by triple loops.
inline std::pair<Matrix, Matrix> slot_attention(const Matrix &K, const Matrix &H,
                                                const std::vector<bool> &mask) {
  const std::size_t S = K.rows(), T = H.rows(), d = K.cols();
  Matrix A(S, T), C(S, d);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t t = 0; t < T; ++t) {
      if (!mask[t])
        continue;
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k)
        acc += K(s, k) * H(t, k);
      A(s, t) = acc / std::sqrt(static_cast<double>(d));
    }
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t k = 0; k < d; ++k) {
      double acc = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        acc += A(s, t) * H(t, k);
      C(s, k) = acc;
    }
  return {A, C};
}

inline double cosine(const std::vector<double> &u, const std::vector<double> &v) {
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0 || vv == 0)
    return 0.0;
  return std::clamp(uv / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

struct Pick {
  Aspect aspect;
  std::size_t sentence;
};

/// Exhaustive retrieval: rank slots by (weight desc, canonical order asc),
/// skip empty slots, then scan every sentence keeping the first maximum.
inline std::vector<Pick> retrieve(const std::vector<double> &h_bar,
                                  const std::vector<Aspect> &aspects,
                                  const std::vector<double> &w,
                                  const std::vector<Matrix> &sentences,
                                  std::size_t k) {
  std::vector<std::size_t> order;
  for (std::size_t s = 0; s < aspects.size(); ++s)
    order.push_back(s);
  for (std::size_t a = 0; a < order.size(); ++a)
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const auto i = order[a], j = order[b];
      const bool swap = w[j] > w[i] ||
                        (w[j] == w[i] && static_cast<int>(aspects[j]) <
                                             static_cast<int>(aspects[i]));
      if (swap)
        std::swap(order[a], order[b]);
    }
  std::vector<Pick> out;
  for (std::size_t s : order) {
    if (out.size() == k)
      break;
    const Matrix &E = sentences[s];
    if (E.rows() == 0)
      continue;
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t r = 0; r < E.rows(); ++r) {
      std::vector<double> row(E.cols());
      for (std::size_t c = 0; c < E.cols(); ++c)
        row[c] = E(r, c);
      const double sim = cosine(h_bar, row);
      if (sim > best_sim) {
        best_sim = sim;
        best = r;
      }
    }
    out.push_back({aspects[s], best});
  }
  return out;
}

} // namespace tbvad::oracle
