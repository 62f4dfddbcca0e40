#include <doctest.h>

#include <cmath>
#include <vector>

#include "support/oracles.hpp"
#include "tbvad/error.hpp"
#include "tbvad/hashing.hpp"
#include "tbvad/metrics.hpp"

using namespace tbvad;

namespace {

struct Instance {
  std::vector<double> s;
  std::vector<int> y;
};

// Scores drawn from a few levels so ties are common.
Instance random_instance(Rng &rng, bool need_both) {
  for (;;) {
    Instance in;
    const std::size_t n = 2 + rng.below(19);
    const std::uint64_t levels = 1 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) {
      in.s.push_back(static_cast<double>(rng.below(levels)) / 4.0);
      in.y.push_back(rng.bernoulli(0.4) ? 1 : 0);
    }
    int pos = 0;
    for (int l : in.y)
      pos += l;
    if (pos > 0 && (!need_both || pos < static_cast<int>(n)))
      return in;
  }
}

} // namespace

TEST_CASE("roc_auc small cases") {
  CHECK(roc_auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{1, 0, 1}) == 0.5);
  CHECK(roc_auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}) == 0.0);
}

TEST_CASE("roc_auc rejects bad input") {
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}),
                  ValidationError);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1}, std::vector<int>{1, 0}),
                  ValidationError);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{2, 0}),
                  ValidationError);
}

TEST_CASE("roc_auc matches pair counting") {
  Rng rng(11);
  for (int it = 0; it < 1000; ++it) {
    const auto in = random_instance(rng, true);
    CHECK(std::abs(roc_auc(in.s, in.y) - oracle::auc_pairs(in.s, in.y)) <= 1e-12);
  }
}

TEST_CASE("roc_auc complement and monotone invariance") {
  Rng rng(12);
  for (int it = 0; it < 200; ++it) {
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 12; ++i) {
      s.push_back(rng.uniform());
      y.push_back(i % 3 == 0);
    }
    std::vector<double> neg, cubed;
    for (double v : s) {
      neg.push_back(-v);
      cubed.push_back(std::exp(3.0 * v) + v * v * v);
    }
    CHECK(std::abs(roc_auc(s, y) + roc_auc(neg, y) - 1.0) <= 1e-12);
    CHECK(roc_auc(s, y) == roc_auc(cubed, y));
  }
}

TEST_CASE("average_precision small cases") {
  CHECK(average_precision(std::vector<double>{0.9, 0.8, 0.2, 0.1},
                          std::vector<int>{1, 1, 0, 0}) == 1.0);
  CHECK(average_precision(std::vector<double>{0.9, 0.8, 0.7, 0.1},
                          std::vector<int>{0, 0, 0, 1}) == doctest::Approx(0.25));
  CHECK_THROWS_AS(average_precision(std::vector<double>{0.5, 0.4},
                                    std::vector<int>{0, 0}),
                  ValidationError);
}

TEST_CASE("average_precision matches all-cutpoint scan") {
  Rng rng(13);
  for (int it = 0; it < 1000; ++it) {
    const auto in = random_instance(rng, false);
    CHECK(std::abs(average_precision(in.s, in.y) - oracle::ap_cutpoints(in.s, in.y)) <=
          1e-12);
  }
}

TEST_CASE("accuracy") {
  const std::vector<double> s{0.9, 0.2, 0.6, 0.4};
  const std::vector<int> y{1, 0, 1, 0};
  CHECK(accuracy(s, y) == 1.0);
  // threshold 0 predicts everything positive
  CHECK(accuracy(s, y, 0.0) == 0.5);
  CHECK_THROWS_AS(accuracy(std::vector<double>{}, std::vector<int>{}), ValidationError);

  Rng rng(14);
  for (int it = 0; it < 200; ++it) {
    std::vector<double> rs;
    std::vector<int> ry;
    for (int i = 0; i < 15; ++i) {
      rs.push_back(rng.uniform());
      ry.push_back(rng.bernoulli(0.5));
    }
    const double t = rng.uniform();
    CHECK(accuracy(rs, ry, t) == oracle::accuracy_count(rs, ry, t));
  }
}

TEST_CASE("accuracy threshold sweep predicts fewer positives as t rises") {
  Rng rng(15);
  std::vector<double> s(30);
  for (double &v : s)
    v = rng.uniform();
  const std::vector<int> all_pos(s.size(), 1);
  double prev = 2.0;
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    // with every label positive, accuracy is the predicted-positive share
    const double share = accuracy(s, all_pos, t);
    CHECK(share <= prev);
    prev = share;
  }
}

namespace {
CaptionCorpus corpus_of(const std::vector<std::string> &texts) {
  CaptionCorpus c;
  VideoRecord v{"v", Label::normal, {}};
  for (std::size_t i = 0; i < texts.size(); ++i)
    v.captions.push_back({"v", i, texts[i]});
  c.videos.push_back(v);
  return c;
}
} // namespace

TEST_CASE("caption_stats") {
  CHECK(caption_stats(corpus_of({"a b", "a b c d"})).avg_len == 3.0);
  CHECK(caption_stats(corpus_of({"same words", "same words", "same words"})).tfidf == 0.0);
  CHECK_THROWS_AS(caption_stats(CaptionCorpus{}), ValidationError);

  // Hand table, N = 5 captions:
  //   c1 "x y"      c2 "x z z"   c3 "y"   c4 "x y z w"   c5 "w w"
  //   df: x 3, y 3, z 2, w 2
  //   c1: (1/2 ln(5/3) + 1/2 ln(5/3)) / 2
  //   c2: (1/3 ln(5/3) + 2/3 ln(5/2)) / 2
  //   c3: ln(5/3)
  //   c4: (ln(5/3) + ln(5/3) + ln(5/2) + ln(5/2)) / 4 / 4
  //   c5: ln(5/2)
  const double a = std::log(5.0 / 3.0), b = std::log(5.0 / 2.0);
  const double expected =
      ((a / 2 + a / 2) / 2 + (a / 3 + 2 * b / 3) / 2 + a + (2 * a + 2 * b) / 16 + b) / 5;
  const auto st = caption_stats(corpus_of({"x y", "x z z", "y", "x y z w", "w w"}));
  CHECK(std::abs(st.tfidf - expected) <= 1e-9);
  CHECK(st.avg_len == doctest::Approx(12.0 / 5.0));
}
