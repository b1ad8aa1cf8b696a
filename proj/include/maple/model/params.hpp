// SPDX-License-Identifier: Apache-2.0
//
// Trainable parameter set and its checkpoint format.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"
#include "maple/data/mapf.hpp"
#include "maple/model/aggregator.hpp"
#include "maple/model/config.hpp"
#include "maple/model/entity_head.hpp"
#include "maple/numerics/random.hpp"

namespace maple {

// Storage-generic so the same layout holds values (Matrix<T>) and tape
// handles (Var<T>). Optional members exist only under the matching config switch.
template <class M>
struct ModelParamsT {
  M context;                           // V, M x d
  std::optional<M> slide_context;      // separate_slide_context
  AttentionParamsT<M> attention;       // shared, or low scale when unshared
  std::optional<AttentionParamsT<M>> attention_high;
  GatParamsT<M> gat;
  GatedPoolParamsT<M> pool;
  M tau;                               // 1 x 1
  std::optional<M> tau_entity;         // per_branch_temperature

  const AttentionParamsT<M>& attention_for(Scale s) const {
    return (s == Scale::high && attention_high) ? *attention_high : attention;
  }

  // Visits every parameter in a fixed order with a stable name.
  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f("context", self.context);
    if (self.slide_context) f("slide_context", *self.slide_context);
    f("attention.query", self.attention.query);
    f("attention.key", self.attention.key);
    f("attention.value", self.attention.value);
    if (self.attention_high) {
      f("attention_high.query", self.attention_high->query);
      f("attention_high.key", self.attention_high->key);
      f("attention_high.value", self.attention_high->value);
    }
    f("gat.weight", self.gat.weight);
    f("gat.attention", self.gat.attention);
    f("pool.tanh_branch", self.pool.tanh_branch);
    f("pool.sigmoid_branch", self.pool.sigmoid_branch);
    f("pool.score", self.pool.score);
    f("tau", self.tau);
    if (self.tau_entity) f("tau_entity", *self.tau_entity);
  }
};

template <class T>
using ModelParams = ModelParamsT<Matrix<T>>;

template <class T>
using ParamVars = ModelParamsT<Var<T>>;

template <class T>
ModelParams<T> init_params(std::size_t dim, const RunConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "init"));
  const double fan_in = 1.0 / std::sqrt(static_cast<double>(dim));
  auto attention = [&] {
    AttentionParamsT<Matrix<T>> a;
    a.query = rng.normal_matrix<T>(dim, dim, fan_in);
    a.key = rng.normal_matrix<T>(dim, dim, fan_in);
    a.value = rng.normal_matrix<T>(dim, dim, fan_in);
    return a;
  };
  ModelParams<T> p;
  p.context = rng.normal_matrix<T>(cfg.context_vectors, dim, kContextInitStd);
  if (cfg.separate_slide_context) p.slide_context = rng.normal_matrix<T>(cfg.context_vectors, dim, kContextInitStd);
  p.attention = attention();
  if (!cfg.share_attention_across_scales) p.attention_high = attention();
  p.gat.weight = rng.normal_matrix<T>(dim, dim, fan_in);
  p.gat.attention = rng.normal_matrix<T>(2 * dim, 1, 1.0 / std::sqrt(2.0 * static_cast<double>(dim)));
  p.pool.tanh_branch = rng.normal_matrix<T>(dim, dim, fan_in);
  p.pool.sigmoid_branch = rng.normal_matrix<T>(dim, dim, fan_in);
  p.pool.score = rng.normal_matrix<T>(dim, 1, fan_in);
  p.tau = Matrix<T>(1, 1, static_cast<T>(cfg.tau_init));
  if (cfg.per_branch_temperature) p.tau_entity = Matrix<T>(1, 1, static_cast<T>(cfg.tau_init));
  return p;
}

template <class U, class T>
ModelParams<U> cast_params(const ModelParams<T>& p) {
  ModelParams<U> out;
  out.context = p.context.template cast<U>();
  if (p.slide_context) out.slide_context = p.slide_context->template cast<U>();
  auto att = [](const AttentionParamsT<Matrix<T>>& a) {
    return AttentionParamsT<Matrix<U>>{a.query.template cast<U>(), a.key.template cast<U>(), a.value.template cast<U>()};
  };
  out.attention = att(p.attention);
  if (p.attention_high) out.attention_high = att(*p.attention_high);
  out.gat = {p.gat.weight.template cast<U>(), p.gat.attention.template cast<U>()};
  out.pool = {p.pool.tanh_branch.template cast<U>(), p.pool.sigmoid_branch.template cast<U>(),
              p.pool.score.template cast<U>()};
  out.tau = p.tau.template cast<U>();
  if (p.tau_entity) out.tau_entity = p.tau_entity->template cast<U>();
  return out;
}

// Records every parameter on `tape`, as variables when `trainable`.
template <class T>
ParamVars<T> bind_params(Tape<T>& tape, const ModelParams<T>& p, bool trainable) {
  auto leaf = [&](const Matrix<T>& m) { return trainable ? tape.variable(m) : tape.constant(m); };
  auto att = [&](const AttentionParamsT<Matrix<T>>& a) {
    return AttentionParamsT<Var<T>>{leaf(a.query), leaf(a.key), leaf(a.value)};
  };
  ParamVars<T> v;
  v.context = leaf(p.context);
  if (p.slide_context) v.slide_context = leaf(*p.slide_context);
  v.attention = att(p.attention);
  if (p.attention_high) v.attention_high = att(*p.attention_high);
  v.gat = {leaf(p.gat.weight), leaf(p.gat.attention)};
  v.pool = {leaf(p.pool.tanh_branch), leaf(p.pool.sigmoid_branch), leaf(p.pool.score)};
  v.tau = leaf(p.tau);
  if (p.tau_entity) v.tau_entity = leaf(*p.tau_entity);
  return v;
}

inline constexpr int kCheckpointVersion = 1;

// Directory with index.json ({"format", "version", "dim", "params": [{name, file, rows, cols}]})
// and one MAPF file per parameter.
inline void save_checkpoint(const std::filesystem::path& dir, const ModelParams<float>& p) {
  std::filesystem::create_directories(dir);
  nlohmann::json index{{"format", "maple-checkpoint"}, {"version", kCheckpointVersion},
                       {"dim", p.context.cols()}, {"params", nlohmann::json::array()}};
  p.for_each([&](const std::string& name, const Matrix<float>& m) {
    const std::string file = name + ".mapf";
    write_mapf(dir / file, m);
    index["params"].push_back({{"name", name}, {"file", file}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  std::ofstream out(dir / "index.json", std::ios::trunc);
  out << index.dump(2) << "\n";
}

// Loads into a parameter set shaped by `cfg`; names and shapes must match.
inline ModelParams<float> load_checkpoint(const std::filesystem::path& dir, const RunConfig& cfg) {
  std::ifstream in(dir / "index.json");
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open checkpoint index in " + dir.string());
  nlohmann::json index;
  in >> index;
  if (index.value("format", "") != "maple-checkpoint" || index.value("version", 0) != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::version, "unsupported checkpoint format in " + dir.string());
  }
  ModelParams<float> p = init_params<float>(index.at("dim").get<std::size_t>(), cfg);
  std::size_t matched = 0;
  p.for_each([&](const std::string& name, Matrix<float>& m) {
    for (const auto& entry : index.at("params")) {
      if (entry.at("name") != name) continue;
      Matrix<float> loaded = read_mapf(dir / entry.at("file").get<std::string>());
      if (!loaded.same_shape(m)) throw FormatError(FormatError::Kind::dimension, "checkpoint shape mismatch for " + name);
      m = std::move(loaded);
      ++matched;
      return;
    }
    throw FormatError(FormatError::Kind::schema, "checkpoint lacks parameter " + name);
  });
  if (matched != index.at("params").size()) {
    throw FormatError(FormatError::Kind::schema, "checkpoint has parameters this configuration does not use");
  }
  return p;
}

}  // namespace maple
