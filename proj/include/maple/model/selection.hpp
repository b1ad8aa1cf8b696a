// SPDX-License-Identifier: Apache-2.0
//
// Language-guided instance selection: rank a bag's instances by cosine
// similarity to the region prompt and keep the top fraction.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "maple/data/mapf.hpp"
#include "maple/errors.hpp"
#include "maple/numerics/functions.hpp"
#include "maple/numerics/matrix.hpp"

namespace maple {

inline constexpr double kDefaultSelectionRatio = 0.7;

struct SelectionResult {
  std::vector<std::size_t> kept;  // descending score, ties by ascending index
  std::vector<double> scores;     // one per instance
  double ratio = 1.0;
};

template <class T, class U>
std::vector<double> score_instances(std::span<const T> region, const Matrix<U>& bag) {
  if (region.size() != bag.cols()) {
    throw DimensionError("region prompt has dimension " + std::to_string(region.size()) + ", bag has " +
                         std::to_string(bag.cols()));
  }
  std::vector<double> r(region.begin(), region.end());
  std::vector<double> row(bag.cols());
  std::vector<double> scores(bag.rows());
  for (std::size_t j = 0; j < bag.rows(); ++j) {
    for (std::size_t k = 0; k < bag.cols(); ++k) row[k] = static_cast<double>(bag(j, k));
    scores[j] = cosine_similarity<double>(r, row);
  }
  return scores;
}

// max(1, round(ratio * count)).
inline std::size_t selection_count(double ratio, std::size_t count) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("selection ratio must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(count)));
  return std::clamp<std::size_t>(k, 1, count);
}

inline SelectionResult select_top(std::vector<double> scores, double ratio) {
  const std::size_t k = selection_count(ratio, scores.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  return {std::move(order), std::move(scores), ratio};
}

template <class T>
SelectionResult select_instances(std::span<const T> region, const Matrix<float>& bag, double ratio) {
  return select_top(score_instances(region, bag), ratio);
}

// Rows: slide_id,scale,index,score,kept
inline void write_selection_csv(std::ostream& out, const std::string& slide_id, Scale scale,
                                const SelectionResult& sel, bool header) {
  if (header) out << "slide_id,scale,index,score,kept\n";
  std::vector<bool> kept(sel.scores.size(), false);
  for (std::size_t i : sel.kept) kept[i] = true;
  char buf[64];
  for (std::size_t i = 0; i < sel.scores.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", sel.scores[i]);
    out << slide_id << ',' << scale_name(scale) << ',' << i << ',' << buf << ',' << (kept[i] ? 1 : 0) << '\n';
  }
}

}  // namespace maple
