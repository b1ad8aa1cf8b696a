// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the test binaries.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "maple/model/forward.hpp"
#include "maple/prompt/backend.hpp"
#include "maple/prompt/builder.hpp"
#include "maple/text/embeddings.hpp"
#include "oracles/reference.hpp"

namespace test_support {

using namespace maple;

inline ref::Mat to_ref(const Matrix<double>& m) {
  ref::Mat out(m.rows(), ref::Vec(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline ref::Vec column(const Matrix<double>& m) {
  ref::Vec out;
  for (std::size_t i = 0; i < m.rows(); ++i) out.push_back(m(i, 0));
  return out;
}

inline double max_abs_diff(const Matrix<double>& a, const ref::Mat& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - b[i][j]));
  return worst;
}

inline std::vector<std::string> class_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < n; ++c) out.push_back("class_" + std::string(1, static_cast<char>('a' + c)));
  return out;
}

// Small double-precision model with both scales, text-encoded prompts and
// one selected slide. `graph` is the topology at the initial parameters.
struct Toy {
  RunConfig cfg;
  PromptPack pack;
  FrozenTextEncoder enc{1, 0};
  TokenizedPack tokens;
  ModelParams<double> params;
  SlideInstances<double> slide;
  EntityGraph graph;
};

inline Toy make_toy(std::size_t dim = 16, std::size_t entities = 3, std::size_t classes = 4,
                    std::size_t instances = 12, std::uint64_t seed = 1) {
  Toy t;
  t.cfg.n_entities = entities;
  t.cfg.context_vectors = 4;
  t.cfg.seed = seed;
  t.cfg.n_neighbors = 3;
  FixtureBackend backend;
  t.pack = build_prompt_pack(class_names(classes), entities, backend);
  t.enc = FrozenTextEncoder(dim, 0);
  t.tokens = TokenizedPack::from_pack(t.pack, t.enc);
  t.params = init_params<double>(dim, t.cfg);
  // Larger values than the default init so every path carries signal.
  Rng rng(derive_seed(seed, "toy"));
  t.params.context = rng.normal_matrix<double>(t.cfg.context_vectors, dim, 0.5);
  t.params.tau = Matrix<double>(1, 1, 0.5);
  const auto fixed = encode_pack(Matrix<double>(), Matrix<double>(), t.tokens, t.enc);
  std::array<Matrix<float>, 2> bags;
  for (auto& b : bags) b = rng.normal_matrix<float>(instances, dim, 1.0);
  t.slide = select_slide<double>("toy", 1, bags, fixed, t.cfg);
  Tape<double> tape;
  auto pv = bind_params(tape, t.params, false);
  auto ev = encode_pack(tape, tape.constant(t.params.context), tape.constant(t.params.context), t.tokens, t.enc);
  t.graph = forward_slide(tape, pv, ev, t.slide, t.cfg).graph;
  return t;
}

// Trainable matrices in the order the gradient check perturbs them.
inline std::vector<Matrix<double>> toy_param_list(const ModelParams<double>& p) {
  return {p.context,          p.attention.query,       p.attention.key, p.attention.value,
          p.gat.weight,       p.gat.attention,         p.pool.tanh_branch, p.pool.sigmoid_branch,
          p.pool.score,       p.tau};
}

inline ParamVars<double> toy_param_vars(std::span<const Var<double>> v) {
  ParamVars<double> pv;
  pv.context = v[0];
  pv.attention = {v[1], v[2], v[3]};
  pv.gat = {v[4], v[5]};
  pv.pool = {v[6], v[7], v[8]};
  pv.tau = v[9];
  return pv;
}

// Loss of the toy slide as a function of every trainable matrix.
inline Var<double> toy_loss(const Toy& t, Tape<double>& tape, std::span<const Var<double>> v) {
  const ParamVars<double> pv = toy_param_vars(v);
  const auto ev = encode_pack(tape, pv.context, pv.context, t.tokens, t.enc);
  return slide_loss(forward_slide(tape, pv, ev, t.slide, t.cfg, &t.graph), t.slide.label);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("maple_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace test_support
