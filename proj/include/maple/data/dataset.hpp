// SPDX-License-Identifier: Apache-2.0
//
// Dataset manifests and few-shot split sampling.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "maple/data/mapf.hpp"
#include "maple/errors.hpp"
#include "maple/numerics/random.hpp"

namespace maple {

inline constexpr std::size_t kDefaultFeatureDim = 512;

struct SlideEntry {
  std::string id;
  std::size_t label = 0;
  std::string path_low;   // relative paths resolve against the manifest directory
  std::string path_high;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::size_t dim = kDefaultFeatureDim;
  std::vector<SlideEntry> slides;
  std::filesystem::path base_dir;

  std::size_t num_classes() const { return classes.size(); }

  void validate() const {
    if (classes.empty()) throw FormatError(FormatError::Kind::schema, "manifest has no classes");
    if (dim == 0) throw FormatError(FormatError::Kind::schema, "manifest dim must be positive");
    std::set<std::string> seen;
    for (const auto& s : slides) {
      if (s.label >= classes.size()) {
        throw FormatError(FormatError::Kind::schema, "slide '" + s.id + "' label " + std::to_string(s.label) +
                                                         " outside [0, " + std::to_string(classes.size()) + ")");
      }
      if (s.path_low.empty() || s.path_high.empty()) {
        throw FormatError(FormatError::Kind::schema, "slide '" + s.id + "' is missing a scale path");
      }
      if (!seen.insert(s.id).second) {
        throw FormatError(FormatError::Kind::schema, "duplicate slide id '" + s.id + "'");
      }
    }
  }

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  const SlideEntry& slide(const std::string& id) const {
    for (const auto& s : slides)
      if (s.id == id) return s;
    throw ArgumentError("unknown slide id '" + id + "'");
  }

  FeatureBag load_bag(const SlideEntry& s, Scale scale) const {
    return load_feature_bag(resolve(scale == Scale::low ? s.path_low : s.path_high), dim, s.id, scale);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["classes"] = classes;
    j["dim"] = dim;
    j["slides"] = nlohmann::json::array();
    for (const auto& s : slides) {
      j["slides"].push_back({{"id", s.id}, {"label", s.label}, {"path_low", s.path_low}, {"path_high", s.path_high}});
    }
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j, std::filesystem::path base_dir = {}) {
    DatasetManifest m;
    try {
      m.classes = j.at("classes").get<std::vector<std::string>>();
      m.dim = j.at("dim").get<std::size_t>();
      for (const auto& s : j.at("slides")) {
        m.slides.push_back({s.at("id").get<std::string>(), s.at("label").get<std::size_t>(),
                            s.at("path_low").get<std::string>(), s.at("path_high").get<std::string>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatError::Kind::schema, std::string("manifest: ") + e.what());
    }
    m.base_dir = std::move(base_dir);
    m.validate();
    return m;
  }

  static DatasetManifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatError::Kind::io, "cannot open manifest " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatError::Kind::schema, path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << to_json().dump(2) << "\n";
  }
};

struct FewShotSplit {
  std::uint64_t seed = 0;
  std::size_t shots = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

// Per class: `shots` slides to train, min(shots, remaining) to validation,
// everything else to test. A class with fewer than `shots` slides is an error
// unless `allow_short_class`, in which case all of them go to train.
inline FewShotSplit sample_few_shot(const DatasetManifest& manifest, std::size_t shots, std::uint64_t seed,
                                    bool allow_short_class = false) {
  if (shots < 1) throw ConfigError("shots must be at least 1");
  std::vector<std::vector<std::string>> by_class(manifest.num_classes());
  for (const auto& s : manifest.slides) by_class[s.label].push_back(s.id);

  FewShotSplit split;
  split.seed = seed;
  split.shots = shots;
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& ids = by_class[c];
    if (ids.empty()) throw ConfigError("class '" + manifest.classes[c] + "' has no slides");
    if (ids.size() < shots && !allow_short_class) {
      throw ConfigError("class '" + manifest.classes[c] + "' has " + std::to_string(ids.size()) +
                        " slides, fewer than " + std::to_string(shots) + " shots (use allow_short_class)");
    }
    rng.shuffle(ids);
    const std::size_t n_train = std::min(shots, ids.size());
    const std::size_t n_val = std::min(shots, ids.size() - n_train);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.val : split.test);
      dst.push_back(ids[i]);
    }
  }
  return split;
}

// Repeated few-shot sampling with seeds base_seed + i.
inline std::vector<FewShotSplit> build_cv_repeats(const DatasetManifest& manifest, std::size_t shots,
                                                  std::size_t n_repeats, std::uint64_t base_seed,
                                                  bool allow_short_class = false) {
  if (n_repeats < 1) throw ConfigError("n_repeats must be at least 1");
  std::vector<FewShotSplit> out;
  for (std::size_t i = 0; i < n_repeats; ++i) {
    out.push_back(sample_few_shot(manifest, shots, base_seed + i, allow_short_class));
  }
  return out;
}

}  // namespace maple
