// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maple/data/mapf.hpp"
#include "maple/errors.hpp"
#include "maple/model/aggregator.hpp"
#include "maple/model/selection.hpp"
#include "maple/prompt/builder.hpp"
#include "maple/text/encoder.hpp"

namespace maple {

inline constexpr double kDefaultLambda = 0.3;
inline constexpr double kDefaultTemperature = 0.07;
inline constexpr double kMinTemperature = 0.01;
inline constexpr double kMaxTemperature = 1.0;

struct AblationFlags {
  bool no_selection = false;  // keep every instance
  bool no_egca = false;       // uniform instead of prompt-guided attention
  bool no_graph = false;      // pool the entity features without graph refinement
  bool entity_only = false;   // lambda = 0
  bool slide_only = false;    // lambda = 1
};

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct RunConfig {
  std::size_t shots = 16;
  double lambda = kDefaultLambda;
  double selection_ratio = kDefaultSelectionRatio;
  std::size_t n_entities = kDefaultEntitiesPerScale;
  std::size_t n_neighbors = kDefaultNeighbors;
  bool use_low = true;
  bool use_high = true;
  AblationFlags ablation;
  OptimizerConfig optimizer;
  std::size_t max_epochs = 80;
  std::size_t patience = 10;
  std::uint64_t seed = 0;

  std::size_t context_vectors = kDefaultContextVectors;
  bool separate_slide_context = false;   // own context vectors for slide prompts
  bool per_branch_temperature = false;   // separate temperatures for slide and entity logits
  bool residual_after_norm = true;       // LayerNorm(attended) + d_gen
  bool share_attention_across_scales = true;
  double tau_init = kDefaultTemperature;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(selection_ratio > 0.0 && selection_ratio <= 1.0)) throw ConfigError("selection ratio r must lie in (0, 1]");
    if (!use_low && !use_high) throw ConfigError("at least one scale must be enabled");
    if (ablation.entity_only && ablation.slide_only) throw ConfigError("entity_only and slide_only are mutually exclusive");
    if (shots < 1) throw ConfigError("shots must be at least 1");
    if (n_entities < 1) throw ConfigError("n_entities must be at least 1");
    if (n_neighbors < 1) throw ConfigError("n_neighbors must be at least 1");
    if (context_vectors < 1) throw ConfigError("context_vectors must be at least 1");
    if (!(tau_init >= kMinTemperature && tau_init <= kMaxTemperature)) {
      throw ConfigError("tau_init must lie in [0.01, 1]");
    }
    if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
      throw ConfigError("optimizer betas must lie in [0, 1)");
    }
    if (optimizer.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  }

  double effective_lambda() const {
    if (ablation.entity_only) return 0.0;
    if (ablation.slide_only) return 1.0;
    return lambda;
  }

  double effective_ratio() const { return ablation.no_selection ? 1.0 : selection_ratio; }

  std::vector<Scale> scales() const {
    std::vector<Scale> out;
    if (use_low) out.push_back(Scale::low);
    if (use_high) out.push_back(Scale::high);
    return out;
  }
};

}  // namespace maple
