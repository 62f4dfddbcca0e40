// SPDX-License-Identifier: Apache-2.0
#include "tbvad/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>

#include "tbvad/error.hpp"

namespace tbvad {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ValidationError("scores and labels differ in length");
  for (int l : labels)
    if (l != 0 && l != 1)
      throw ValidationError("labels must be 0 or 1");
  for (double s : scores)
    if (std::isnan(s))
      throw ValidationError("score is NaN");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores,
                                        bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

} // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto idx = order_by_score(scores, false);
  double n_pos = 0, n_neg = 0, rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]])
      ++j;
    // ranks i+1..j share the midrank
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0)
    throw ValidationError("roc_auc needs both positive and negative labels");
  return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

double average_precision(std::span<const double> scores,
                         std::span<const int> labels) {
  check_inputs(scores, labels);
  const double total_pos = std::count(labels.begin(), labels.end(), 1);
  if (total_pos == 0)
    throw ValidationError("average_precision needs at least one positive label");
  const auto idx = order_by_score(scores, true);
  double tp = 0, fp = 0, prev_recall = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]])
      ++j;
    for (std::size_t k = i; k < j; ++k)
      (labels[idx[k]] == 1 ? tp : fp) += 1;
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double accuracy(std::span<const double> scores, std::span<const int> labels,
                double threshold) {
  check_inputs(scores, labels);
  if (scores.empty())
    throw ValidationError("accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    correct += (scores[i] >= threshold ? 1 : 0) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

namespace {
std::vector<std::string> whitespace_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i])))
      ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j])))
      ++j;
    if (j > i)
      out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}
} // namespace

CaptionStats caption_stats(const CaptionCorpus &corpus) {
  std::vector<std::vector<std::string>> docs;
  for (const auto &v : corpus.videos)
    for (const auto &c : v.captions)
      docs.push_back(whitespace_tokens(c.text));
  if (docs.empty())
    throw ValidationError("caption_stats of an empty corpus");

  std::unordered_map<std::string, std::size_t> df;
  for (const auto &d : docs) {
    std::map<std::string, int> uniq;
    for (const auto &t : d)
      uniq[t] = 1;
    for (const auto &[t, _] : uniq)
      ++df[t];
  }
  const double n = static_cast<double>(docs.size());
  double len_sum = 0.0, tfidf_sum = 0.0;
  for (const auto &d : docs) {
    len_sum += static_cast<double>(d.size());
    if (d.empty())
      continue;
    std::map<std::string, std::size_t> tf;
    for (const auto &t : d)
      ++tf[t];
    double s = 0.0;
    for (const auto &[t, count] : tf)
      s += (static_cast<double>(count) / d.size()) *
           std::log(n / static_cast<double>(df.at(t)));
    tfidf_sum += s / static_cast<double>(tf.size());
  }
  return {len_sum / n, tfidf_sum / n};
}

} // namespace tbvad
