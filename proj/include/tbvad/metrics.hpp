// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "tbvad/textcorpus.hpp"

namespace tbvad {

/// Mann-Whitney AUC with midrank ties: P(pos > neg) + P(tie) / 2.
/// Throws ValidationError unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Non-interpolated AP: sum over descending-score cut points of
/// (R_k - R_{k-1}) * P_k, where tied scores enter together.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// Fraction of items with (score >= threshold) == label.
double accuracy(std::span<const double> scores, std::span<const int> labels,
                double threshold = 0.5);

struct CaptionStats {
  double avg_len = 0.0;
  double tfidf = 0.0;
};

/// avg_len: mean whitespace-token count per caption. tfidf: mean over
/// captions of the mean TF-IDF of each caption's distinct terms, with
/// TF = count / caption length and IDF = ln(N / df) over captions.
CaptionStats caption_stats(const CaptionCorpus &corpus);

} // namespace tbvad
