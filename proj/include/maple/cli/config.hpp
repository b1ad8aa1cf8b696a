// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` experiment configuration with `#` comments.

#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "maple/errors.hpp"
#include "maple/train/experiment.hpp"

namespace maple::cli {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find(sep, start), s.size());
    std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = end + 1;
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Relative paths resolve against `base_dir` (the config file's directory).
inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value,
                             const std::filesystem::path& base_dir = {}) {
  RunConfig& r = cfg.run;
  auto path = [&] {
    std::filesystem::path p(value);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  auto count = [&] { return static_cast<std::size_t>(parse_uint(key, value)); };
  if (key == "manifest") cfg.manifest = path();
  else if (key == "prompt_pack") cfg.prompt_pack = path();
  else if (key == "embeddings") cfg.embeddings = path();
  else if (key == "output_dir") cfg.output_dir = path();
  else if (key == "setting") cfg.setting = value;
  else if (key == "n_repeats") cfg.n_repeats = count();
  else if (key == "allow_short_class") cfg.allow_short_class = parse_bool(key, value);
  else if (key == "std_mode") {
    if (value == "population") cfg.std_mode = StdMode::population;
    else if (value == "sample") cfg.std_mode = StdMode::sample;
    else throw ConfigError("std_mode must be population or sample");
  }
  else if (key == "shots") r.shots = count();
  else if (key == "lambda") r.lambda = parse_double(key, value);
  else if (key == "r") r.selection_ratio = parse_double(key, value);
  else if (key == "n_entities") r.n_entities = count();
  else if (key == "n_neighbors") r.n_neighbors = count();
  else if (key == "scales") {
    r.use_low = r.use_high = false;
    for (const auto& s : split_list(value)) {
      const Scale sc = parse_scale(s);
      (sc == Scale::low ? r.use_low : r.use_high) = true;
    }
  }
  else if (key == "no_selection") r.ablation.no_selection = parse_bool(key, value);
  else if (key == "no_egca") r.ablation.no_egca = parse_bool(key, value);
  else if (key == "no_graph") r.ablation.no_graph = parse_bool(key, value);
  else if (key == "entity_only") r.ablation.entity_only = parse_bool(key, value);
  else if (key == "slide_only") r.ablation.slide_only = parse_bool(key, value);
  else if (key == "lr") r.optimizer.lr = parse_double(key, value);
  else if (key == "beta1") r.optimizer.beta1 = parse_double(key, value);
  else if (key == "beta2") r.optimizer.beta2 = parse_double(key, value);
  else if (key == "adam_eps") r.optimizer.eps = parse_double(key, value);
  else if (key == "weight_decay") r.optimizer.weight_decay = parse_double(key, value);
  else if (key == "max_epochs") r.max_epochs = count();
  else if (key == "patience") r.patience = count();
  else if (key == "seed") r.seed = parse_uint(key, value);
  else if (key == "context_vectors") r.context_vectors = count();
  else if (key == "separate_slide_context") r.separate_slide_context = parse_bool(key, value);
  else if (key == "per_branch_temperature") r.per_branch_temperature = parse_bool(key, value);
  else if (key == "residual_after_norm") r.residual_after_norm = parse_bool(key, value);
  else if (key == "share_attention_scales") r.share_attention_across_scales = parse_bool(key, value);
  else if (key == "tau_init") r.tau_init = parse_double(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    try {
      set_config_value(cfg, key, value, base_dir);
    } catch (const Error& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.run.validate();
  if (cfg.n_repeats < 1) throw ConfigError("n_repeats must be at least 1");
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_config(in, path.parent_path());
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Every key, paths as absolute as they were resolved.
inline std::string config_to_text(const ExperimentConfig& cfg) {
  const RunConfig& r = cfg.run;
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::ostringstream o;
  auto put = [&](const char* key, const std::string& v) {
    if (!v.empty()) o << key << " = " << v << '\n';
  };
  put("manifest", cfg.manifest.string());
  put("prompt_pack", cfg.prompt_pack.string());
  put("embeddings", cfg.embeddings.string());
  put("output_dir", cfg.output_dir.string());
  put("setting", cfg.setting);
  put("n_repeats", std::to_string(cfg.n_repeats));
  put("allow_short_class", b(cfg.allow_short_class));
  put("std_mode", cfg.std_mode == StdMode::population ? "population" : "sample");
  put("shots", std::to_string(r.shots));
  put("lambda", format_number(r.lambda));
  put("r", format_number(r.selection_ratio));
  put("n_entities", std::to_string(r.n_entities));
  put("n_neighbors", std::to_string(r.n_neighbors));
  put("scales", r.use_low && r.use_high ? "low,high" : (r.use_low ? "low" : "high"));
  put("no_selection", b(r.ablation.no_selection));
  put("no_egca", b(r.ablation.no_egca));
  put("no_graph", b(r.ablation.no_graph));
  put("entity_only", b(r.ablation.entity_only));
  put("slide_only", b(r.ablation.slide_only));
  put("lr", format_number(r.optimizer.lr));
  put("beta1", format_number(r.optimizer.beta1));
  put("beta2", format_number(r.optimizer.beta2));
  put("adam_eps", format_number(r.optimizer.eps));
  put("weight_decay", format_number(r.optimizer.weight_decay));
  put("max_epochs", std::to_string(r.max_epochs));
  put("patience", std::to_string(r.patience));
  put("seed", std::to_string(r.seed));
  put("context_vectors", std::to_string(r.context_vectors));
  put("separate_slide_context", b(r.separate_slide_context));
  put("per_branch_temperature", b(r.per_branch_temperature));
  put("residual_after_norm", b(r.residual_after_norm));
  put("share_attention_scales", b(r.share_attention_across_scales));
  put("tau_init", format_number(r.tau_init));
  return o.str();
}

}  // namespace maple::cli
