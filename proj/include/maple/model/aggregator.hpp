// SPDX-License-Identifier: Apache-2.0
//
// Multi-scale entity aggregation: cosine kNN graph over the entity features of
// both scales, one graph-attention layer, gated attention pooling per scale
// and slide logits against the slide prompt embeddings.

#pragma once

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "maple/errors.hpp"
#include "maple/numerics/functions.hpp"
#include "maple/numerics/ops.hpp"

namespace maple {

inline constexpr std::size_t kDefaultNeighbors = 7;
inline constexpr double kGatLeakySlope = 0.2;

struct EntityGraph {
  // neighbors[v]: the most similar other nodes, best first. Never contains v.
  std::vector<std::vector<std::size_t>> neighbors;

  std::size_t size() const { return neighbors.size(); }

  // Attention support per node: its neighbors plus a self-loop.
  std::vector<std::vector<std::size_t>> support() const {
    auto out = neighbors;
    for (std::size_t v = 0; v < out.size(); ++v) out[v].push_back(v);
    return out;
  }
};

// Topology only; it is rebuilt every forward pass and never differentiated.
// `n_neighbors` is clamped to N - 1.
template <class T>
EntityGraph build_entity_graph(const Matrix<T>& features, std::size_t n_neighbors) {
  const std::size_t n = features.rows();
  if (n < 2) throw ArgumentError("entity graph needs at least two nodes");
  if (n_neighbors < 1) throw ConfigError("number of neighbors must be at least 1");
  const std::size_t k = std::min(n_neighbors, n - 1);
  EntityGraph g;
  g.neighbors.resize(n);
  std::vector<double> sim(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t u = 0; u < n; ++u) sim[u] = static_cast<double>(cosine_similarity(features.row(v), features.row(u)));
    std::vector<std::size_t> order;
    for (std::size_t u = 0; u < n; ++u)
      if (u != v) order.push_back(u);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    order.resize(k);
    g.neighbors[v] = std::move(order);
  }
  return g;
}

template <class M>
struct GatParamsT {
  M weight;     // d x d'
  M attention;  // 2d' x 1
};

template <class M>
struct GatedPoolParamsT {
  M tanh_branch;     // W_V, d x d
  M sigmoid_branch;  // W_U, d x d
  M score;           // w, d x 1
};

template <class T>
struct GatOutput {
  Var<T> features;      // N x d'
  Var<T> coefficients;  // N x N, zero off the support
};

// One-head graph attention layer with ReLU output.
template <class T>
GatOutput<T> gat_update(Var<T> nodes, const EntityGraph& graph, const GatParamsT<Var<T>>& p,
                        T slope = T(kGatLeakySlope)) {
  const std::size_t n = nodes.rows();
  if (graph.size() != n) throw DimensionError("graph size does not match node count");
  const std::size_t dp = p.weight.cols();
  if (p.attention.rows() != 2 * dp || p.attention.cols() != 1) throw DimensionError("GAT attention vector must be 2d' x 1");
  Tape<T>& tape = *nodes.tape;
  Var<T> h = ops::matmul(nodes, p.weight);  // N x d'
  Var<T> src = ops::matmul(h, ops::slice_rows(p.attention, 0, dp));   // N x 1
  Var<T> dst = ops::matmul(h, ops::slice_rows(p.attention, dp, dp));  // N x 1
  Var<T> ones_row = tape.constant(Matrix<T>(1, n, T(1)));
  Var<T> ones_col = tape.constant(Matrix<T>(n, 1, T(1)));
  // e(v, u) = a_src . h_v + a_dst . h_u
  Var<T> scores = ops::add(ops::matmul(src, ones_row), ops::matmul(ones_col, ops::transpose(dst)));
  Var<T> alpha = ops::masked_softmax_rows(ops::leaky_relu(scores, slope), graph.support());
  return {ops::relu(ops::matmul(alpha, h)), alpha};
}

template <class T>
struct PooledSlide {
  Var<T> feature;  // 1 x d
  Var<T> weights;  // 1 x N_s
};

template <class T>
PooledSlide<T> gated_attention_pool(Var<T> h, const GatedPoolParamsT<Var<T>>& p) {
  if (h.rows() < 1) throw ArgumentError("gated pooling needs at least one row");
  Var<T> gate = ops::hadamard(ops::tanh(ops::matmul(h, p.tanh_branch)), ops::sigmoid(ops::matmul(h, p.sigmoid_branch)));
  Var<T> alpha = ops::softmax_rows(ops::transpose(ops::matmul(gate, p.score)));
  return {ops::matmul(alpha, h), alpha};
}

// 1 x C cosine logits against C x d slide prompt embeddings.
template <class T>
Var<T> slide_logits(Var<T> slide_feature, Var<T> slide_prompts) {
  if (slide_prompts.rows() < 1) throw ArgumentError("slide logits need at least one class embedding");
  return ops::cosine_matrix(slide_feature, slide_prompts);
}

// {"nodes": [{"scale", "entity"}], "edges": [[src, dst, weight]]}
template <class T>
nlohmann::json graph_dump(const std::vector<std::pair<std::string, std::string>>& nodes, const EntityGraph& graph,
                          const Matrix<T>& coefficients) {
  nlohmann::json j{{"nodes", nlohmann::json::array()}, {"edges", nlohmann::json::array()}};
  for (const auto& [scale, entity] : nodes) j["nodes"].push_back({{"scale", scale}, {"entity", entity}});
  const auto support = graph.support();
  for (std::size_t v = 0; v < support.size(); ++v)
    for (std::size_t u : support[v]) j["edges"].push_back({v, u, static_cast<double>(coefficients(v, u))});
  return j;
}

}  // namespace maple
