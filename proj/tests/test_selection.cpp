// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "maple/model/selection.hpp"
#include "maple/numerics/random.hpp"
#include "support.hpp"

using namespace maple;

namespace {

std::vector<double> unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double n = 0;
  for (double& x : v) {
    x = rng.normal(0, 1);
    n += x * x;
  }
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

std::span<const double> span_of(const std::vector<double>& v) { return {v.data(), v.size()}; }

}  // namespace

TEST(Score, RowEqualToPrompt) {
  Rng rng(1);
  const auto t = unit(8, rng);
  Matrix<float> bag = rng.normal_matrix<float>(5, 8, 1.0);
  for (std::size_t j = 0; j < 8; ++j) bag(3, j) = static_cast<float>(t[j]);
  const auto s = score_instances(span_of(t), bag);
  EXPECT_NEAR(s[3], 1.0, 1e-6);
  for (double x : s) {
    EXPECT_GE(x, -1.0 - 1e-12);
    EXPECT_LE(x, 1.0 + 1e-12);
  }
}

TEST(Score, OrthogonalRows) {
  const std::vector<double> t{1, 0, 0, 0};
  Matrix<float> bag(3, 4);
  bag(0, 1) = 1;
  bag(1, 2) = -2;
  bag(2, 3) = 0.5f;
  for (double x : score_instances(span_of(t), bag)) EXPECT_EQ(x, 0.0);
}

TEST(Score, MatchesLoopOracle) {
  Rng rng(2);
  const auto t = unit(8, rng);
  const auto bag = rng.normal_matrix<float>(10, 8, 1.0);
  const auto s = score_instances(span_of(t), bag);
  for (std::size_t j = 0; j < 10; ++j) {
    ref::Vec row(8);
    for (std::size_t k = 0; k < 8; ++k) row[k] = bag(j, k);
    EXPECT_NEAR(s[j], ref::cosine(t, row), 1e-12);
  }
  EXPECT_THROW(score_instances(span_of(t), Matrix<float>(3, 7)), DimensionError);
}

TEST(Select, Counts) {
  EXPECT_EQ(selection_count(1.0, 10), 10u);
  EXPECT_EQ(selection_count(0.7, 10), 7u);
  EXPECT_EQ(selection_count(0.01, 10), 1u);
  EXPECT_EQ(selection_count(0.25, 10), 3u);
  EXPECT_EQ(selection_count(0.5, 1), 1u);
  EXPECT_THROW(selection_count(0.0, 10), ConfigError);
  EXPECT_THROW(selection_count(1.01, 10), ConfigError);
  EXPECT_DOUBLE_EQ(kDefaultSelectionRatio, 0.7);
}

TEST(Select, FullRatioKeepsAll) {
  Rng rng(3);
  const auto t = unit(6, rng);
  const auto r = select_instances(span_of(t), rng.normal_matrix<float>(9, 6, 1.0), 1.0);
  EXPECT_EQ(r.kept.size(), 9u);
  EXPECT_EQ(std::set<std::size_t>(r.kept.begin(), r.kept.end()).size(), 9u);
}

TEST(Select, SortOracle) {
  Rng rng(4);
  for (int it = 0; it < 200; ++it) {
    const auto t = unit(8, rng);
    const auto bag = rng.normal_matrix<float>(10, 8, 1.0);
    const auto r = select_instances(span_of(t), bag, 0.7);
    ref::Vec scores(r.scores.begin(), r.scores.end());
    EXPECT_EQ(r.kept, ref::top_fraction(scores, 0.7));
  }
}

TEST(Select, TiesByIndex) {
  const auto r = select_top({0.5, 0.9, 0.5, 0.9, 0.1}, 0.6);
  EXPECT_EQ(r.kept, (std::vector<std::size_t>{1, 3, 0}));
}

TEST(Select, Properties) {
  Rng rng(5);
  for (int it = 0; it < 200; ++it) {
    const std::size_t k = 1 + rng.index(30);
    std::vector<double> scores(k);
    for (double& s : scores) s = std::round(rng.uniform(-1, 1) * 8) / 8;  // frequent ties
    const double r1 = rng.uniform(0.01, 1.0), r2 = rng.uniform(r1, 1.0);
    const auto a = select_top(scores, r1), b = select_top(scores, r2);
    EXPECT_EQ(a.kept.size(), std::max<std::size_t>(1, std::llround(r1 * k)));
    const std::set<std::size_t> small(a.kept.begin(), a.kept.end()), large(b.kept.begin(), b.kept.end());
    EXPECT_TRUE(std::includes(large.begin(), large.end(), small.begin(), small.end())) << "nested selection";
    std::vector<bool> kept(k, false);
    for (std::size_t i : a.kept) kept[i] = true;
    double min_kept = 2, max_dropped = -2;
    for (std::size_t i = 0; i < k; ++i) {
      if (kept[i]) {
        min_kept = std::min(min_kept, scores[i]);
      } else {
        max_dropped = std::max(max_dropped, scores[i]);
      }
    }
    EXPECT_GE(min_kept, max_dropped);
  }
}

TEST(Select, PermutationEquivariant) {
  Rng rng(6);
  for (int it = 0; it < 50; ++it) {
    const std::size_t k = 2 + rng.index(15);
    std::vector<double> scores(k);
    for (double& s : scores) s = rng.uniform(-1, 1);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<double> permuted(k);
    for (std::size_t i = 0; i < k; ++i) permuted[i] = scores[perm[i]];
    const auto a = select_top(scores, 0.5), b = select_top(permuted, 0.5);
    ASSERT_EQ(a.kept.size(), b.kept.size());
    for (std::size_t i = 0; i < a.kept.size(); ++i) EXPECT_EQ(perm[b.kept[i]], a.kept[i]);
  }
}

TEST(Select, CsvExport) {
  std::ostringstream out;
  write_selection_csv(out, "s1", Scale::high, select_top({0.25, -0.5, 1.0}, 0.7), true);
  EXPECT_EQ(out.str(),
            "slide_id,scale,index,score,kept\n"
            "s1,high,0,0.25,1\n"
            "s1,high,1,-0.5,0\n"
            "s1,high,2,1,1\n");
}
