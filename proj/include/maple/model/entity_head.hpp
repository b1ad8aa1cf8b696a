// SPDX-License-Identifier: Apache-2.0
//
// Entity-guided cross-attention: each entity's generic prompt embedding
// queries the selected instances of one scale; the attended value is
// layer-normalized and the prompt embedding is added back. Entity logits are
// cosine similarities against the per-subtype attribute embeddings.

#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "maple/errors.hpp"
#include "maple/numerics/ops.hpp"

namespace maple {

template <class M>
struct AttentionParamsT {
  M query;  // d x d_k
  M key;    // d x d_k
  M value;  // d x d_k
};

enum class EntityAggregation {
  cross_attention,
  mean_pool,  // no prompt-guided attention: uniform weights over the instances
};

struct EntityHeadOptions {
  EntityAggregation aggregation = EntityAggregation::cross_attention;
  // true:  LayerNorm(attended) + d_gen
  // false: LayerNorm(attended + d_gen)
  bool residual_after_norm = true;
};

template <class T>
struct EntityFeatures {
  Var<T> features;  // E x d
  Var<T> weights;   // E x K, rows sum to 1
};

template <class T>
EntityFeatures<T> entity_cross_attention(Var<T> generic, Var<T> instances, const AttentionParamsT<Var<T>>& p,
                                         const EntityHeadOptions& options = {}) {
  if (instances.rows() < 1) throw ArgumentError("entity attention needs at least one instance");
  if (generic.cols() != instances.cols() || p.query.rows() != generic.cols() || p.key.rows() != instances.cols() ||
      p.value.rows() != instances.cols()) {
    throw DimensionError("entity attention: dimension mismatch");
  }
  if (p.value.cols() != generic.cols()) throw DimensionError("entity attention requires d_k == d for the residual");
  Tape<T>& tape = *generic.tape;
  Var<T> values = ops::matmul(instances, p.value);  // K x d_k
  Var<T> attended;
  Var<T> weights;
  if (options.aggregation == EntityAggregation::cross_attention) {
    Var<T> q = ops::matmul(generic, p.query);  // E x d_k
    Var<T> k = ops::matmul(instances, p.key);  // K x d_k
    const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(p.key.cols()));
    weights = ops::softmax_rows(ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt_dk));
    attended = ops::matmul(weights, values);  // E x d_k
  } else {
    const std::size_t e = generic.rows();
    const std::size_t n = instances.rows();
    weights = tape.constant(Matrix<T>(e, n, T(1) / static_cast<T>(n)));
    attended = ops::matmul(weights, values);
  }
  Var<T> features = options.residual_after_norm ? ops::add(ops::layer_norm_rows(attended), generic)
                                                : ops::layer_norm_rows(ops::add(attended, generic));
  return {features, weights};
}

// E x C matrix, entry (e, c) = cos(z_e, attribute embedding of entity e for class c).
template <class T>
Var<T> entity_logits(Var<T> features, const std::vector<Var<T>>& attributes) {
  if (attributes.empty()) throw ArgumentError("entity logits need at least one class");
  std::vector<Var<T>> columns;
  columns.reserve(attributes.size());
  for (const auto& a : attributes) {
    if (a.rows() != features.rows()) throw DimensionError("attribute embeddings missing for some entity");
    columns.push_back(ops::cosine_rowwise(features, a));
  }
  return ops::hstack<T>(columns);
}

// Rows: slide_id,scale,entity,instance_index,weight. `instance_index` maps the
// attended rows back to positions in the original bag.
template <class T>
void write_attention_csv(std::ostream& out, const std::string& slide_id, const std::string& scale,
                         const std::vector<std::string>& entities, const Matrix<T>& weights,
                         const std::vector<std::size_t>& instance_index, bool header) {
  if (weights.rows() != entities.size() || weights.cols() != instance_index.size()) {
    throw DimensionError("attention export: weights do not match entities and instances");
  }
  if (header) out << "slide_id,scale,entity,instance_index,weight\n";
  char buf[64];
  for (std::size_t e = 0; e < weights.rows(); ++e)
    for (std::size_t j = 0; j < weights.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(weights(e, j)));
      out << slide_id << ',' << scale << ',' << entities[e] << ',' << instance_index[j] << ',' << buf << '\n';
    }
}

}  // namespace maple
