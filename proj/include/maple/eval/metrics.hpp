// SPDX-License-Identifier: Apache-2.0
//
// AUC (tie-averaged rank statistic, macro one-vs-rest for C > 2), macro F1,
// argmax accuracy, and aggregation over repeats.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "maple/errors.hpp"
#include "maple/numerics/matrix.hpp"

namespace maple {

// Probability that a random positive outranks a random negative, ties count 1/2.
// Returns nullopt when either class is empty.
inline std::optional<double> binary_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw DimensionError("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0;
  double rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positive[i]) {
      pos += 1;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

// Lowest index wins ties.
template <class T>
std::size_t argmax(std::span<const T> v) {
  if (v.empty()) throw ArgumentError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

struct MetricEntry {
  std::optional<double> auc;  // nullopt when undefined (some class absent)
  double f1 = 0;
  double acc = 0;

  double require_auc() const {
    if (!auc) throw ArgumentError("AUC is undefined: every class needs at least one positive and one negative");
    return *auc;
  }
};

// probabilities: N x C, labels: N entries in [0, C).
inline MetricEntry compute_metrics(const Matrix<double>& probabilities, const std::vector<std::size_t>& labels) {
  const std::size_t n = probabilities.rows();
  const std::size_t c = probabilities.cols();
  if (n != labels.size()) throw DimensionError("probabilities and labels differ in length");
  if (n < 2) throw ArgumentError("metrics need at least two predictions");
  if (c < 2) throw ArgumentError("metrics need at least two classes");
  for (std::size_t y : labels)
    if (y >= c) throw ArgumentError("label out of range");

  MetricEntry m;
  std::vector<std::size_t> predicted(n);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    predicted[i] = argmax<double>(probabilities.row(i));
    if (predicted[i] == labels[i]) ++correct;
  }
  m.acc = static_cast<double>(correct) / static_cast<double>(n);

  // Macro over every class that occurs in the labels or the predictions.
  std::set<std::size_t> seen(labels.begin(), labels.end());
  seen.insert(predicted.begin(), predicted.end());
  double f1_sum = 0;
  for (std::size_t k : seen) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = predicted[i] == k;
      const bool t = labels[i] == k;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    f1_sum += 2 * tp / (2 * tp + fp + fn);
  }
  m.f1 = f1_sum / static_cast<double>(seen.size());

  std::vector<double> scores(n);
  std::vector<bool> pos(n);
  auto auc_for = [&](std::size_t k) {
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = probabilities(i, k);
      pos[i] = labels[i] == k;
    }
    return binary_auc(scores, pos);
  };
  if (c == 2) {
    m.auc = auc_for(1);
  } else {
    double sum = 0;
    bool defined = true;
    for (std::size_t k = 0; k < c && defined; ++k) {
      auto a = auc_for(k);
      if (!a) defined = false;
      else sum += *a;
    }
    if (defined) m.auc = sum / static_cast<double>(c);
  }
  return m;
}

enum class StdMode { population, sample };

struct MeanStd {
  double mean = 0;
  double std = 0;
};

inline MeanStd mean_std(std::span<const double> v, StdMode mode = StdMode::population) {
  if (v.empty()) throw ArgumentError("mean of no values");
  MeanStd out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() == 1) return out;
  double ss = 0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  const double denom = mode == StdMode::population ? static_cast<double>(v.size()) : static_cast<double>(v.size() - 1);
  out.std = std::sqrt(ss / denom);
  return out;
}

struct MetricReport {
  std::vector<MetricEntry> repeats;
  std::optional<MeanStd> auc;  // absent when some repeat has no AUC
  MeanStd f1;
  MeanStd acc;
  StdMode std_mode = StdMode::population;
};

inline MetricReport aggregate_repeats(const std::vector<MetricEntry>& entries, StdMode mode = StdMode::population) {
  if (entries.empty()) throw ArgumentError("nothing to aggregate");
  MetricReport r{entries, std::nullopt, {}, {}, mode};
  std::vector<double> auc, f1, acc;
  for (const auto& e : entries) {
    if (e.auc) auc.push_back(*e.auc);
    f1.push_back(e.f1);
    acc.push_back(e.acc);
  }
  if (auc.size() == entries.size()) r.auc = mean_std(auc, mode);
  r.f1 = mean_std(f1, mode);
  r.acc = mean_std(acc, mode);
  return r;
}

// "0.903±0.033"
inline std::string format_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f\xC2\xB1%.3f", m.mean, m.std);
  return buf;
}

inline constexpr const char* kMetricDefinitions =
    "auc: macro one-vs-rest rank statistic (binary AUC for two classes); f1: macro; acc: argmax accuracy";

inline nlohmann::json report_json(const std::string& setting, std::size_t shots, const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"setting", setting},
                   {"shots", shots},
                   {"definitions", kMetricDefinitions},
                   {"std", r.std_mode == StdMode::population ? "population" : "sample"},
                   {"repeats", nlohmann::json::array()}};
  for (std::size_t i = 0; i < r.repeats.size(); ++i) {
    const auto& e = r.repeats[i];
    j["repeats"].push_back({{"repeat", i}, {"auc", opt(e.auc)}, {"f1", e.f1}, {"acc", e.acc}});
  }
  auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  j["aggregate"] = {{"auc", r.auc ? ms(*r.auc) : nlohmann::json(nullptr)}, {"f1", ms(r.f1)}, {"acc", ms(r.acc)}};
  return j;
}

// Columns: setting,shots,repeat,auc,f1,acc; the final row holds mean±std with repeat = "mean±std".
inline void write_report_csv(std::ostream& out, const std::string& setting, std::size_t shots, const MetricReport& r,
                             bool header = true) {
  if (header) out << "# " << kMetricDefinitions << "\nsetting,shots,repeat,auc,f1,acc\n";
  char buf[128];
  for (std::size_t i = 0; i < r.repeats.size(); ++i) {
    const auto& e = r.repeats[i];
    std::string auc = "nan";
    if (e.auc) {
      std::snprintf(buf, sizeof buf, "%.6f", *e.auc);
      auc = buf;
    }
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", e.f1, e.acc);
    out << setting << ',' << shots << ',' << i << ',' << auc << ',' << buf << '\n';
  }
  out << setting << ',' << shots << ",mean\xC2\xB1std," << (r.auc ? format_mean_std(*r.auc) : std::string("nan")) << ','
      << format_mean_std(r.f1) << ',' << format_mean_std(r.acc) << '\n';
}

}  // namespace maple
