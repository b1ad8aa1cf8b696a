// SPDX-License-Identifier: Apache-2.0
//
// Full per-slide forward pass: selected instances -> entity features and
// entity logits per scale -> cross-scale graph refinement -> gated pooling and
// slide logits per scale -> fused, temperature-scaled class logits.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "maple/model/aggregator.hpp"
#include "maple/model/config.hpp"
#include "maple/model/entity_head.hpp"
#include "maple/model/params.hpp"
#include "maple/model/selection.hpp"
#include "maple/text/embeddings.hpp"

namespace maple {

// A slide after instance selection. `kept[scale]` is empty for a disabled scale.
template <class T>
struct SlideInstances {
  std::string id;
  std::size_t label = 0;
  std::array<Matrix<T>, 2> kept;

  const Matrix<T>& at(Scale s) const { return kept[scale_index(s)]; }
};

template <class T>
struct SlideTrace {
  std::array<std::optional<EntityFeatures<T>>, 2> entity;
  std::array<Var<T>, 2> entity_logits;  // E x C
  std::array<Var<T>, 2> slide_logits;   // 1 x C
  std::array<Var<T>, 2> pool_weights;   // 1 x E
  std::optional<GatOutput<T>> gat;
  EntityGraph graph;
  Var<T> logits;  // 1 x C, what the softmax sees
};

// (1/|S|) sum_s [lambda * slide_s + (1 - lambda) * mean_e entity_s(e, .)]
template <class T>
Var<T> fuse_logits(const std::vector<Var<T>>& entity, const std::vector<Var<T>>& slide, T lambda) {
  if (entity.empty() || entity.size() != slide.size()) throw ArgumentError("fusion needs one entity and one slide term per scale");
  Var<T> total;
  for (std::size_t s = 0; s < entity.size(); ++s) {
    Var<T> term = ops::add(ops::scale(slide[s], lambda), ops::scale(ops::mean_rows(entity[s]), T(1) - lambda));
    total = s == 0 ? term : ops::add(total, term);
  }
  return entity.size() == 1 ? total : ops::scale(total, T(1) / static_cast<T>(entity.size()));
}

template <class T>
SlideInstances<T> select_slide(const std::string& id, std::size_t label, const std::array<Matrix<float>, 2>& bags,
                               const PromptEmbeddings<T>& emb, const RunConfig& cfg,
                               std::array<SelectionResult, 2>* selections = nullptr) {
  SlideInstances<T> out{id, label, {}};
  for (Scale s : cfg.scales()) {
    const Matrix<float>& bag = bags[scale_index(s)];
    if (bag.rows() == 0) throw ArgumentError("slide " + id + " has no " + std::string(scale_name(s)) + "-scale instances");
    SelectionResult sel = select_instances(emb.at(s).region.row(0), bag, cfg.effective_ratio());
    out.kept[scale_index(s)] = bag.gather_rows(sel.kept).template cast<T>();
    if (selections) (*selections)[scale_index(s)] = std::move(sel);
  }
  return out;
}

// `fixed_graph` pins the graph topology, which is otherwise rebuilt from the
// current entity features; gradient checks use it to keep the function smooth.
template <class T>
SlideTrace<T> forward_slide(Tape<T>& tape, const ParamVars<T>& p, const EmbeddingVars<T>& emb,
                            const SlideInstances<T>& slide, const RunConfig& cfg,
                            const EntityGraph* fixed_graph = nullptr) {
  const auto scales = cfg.scales();
  EntityHeadOptions head;
  head.aggregation = cfg.ablation.no_egca ? EntityAggregation::mean_pool : EntityAggregation::cross_attention;
  head.residual_after_norm = cfg.residual_after_norm;

  SlideTrace<T> tr;
  std::vector<Var<T>> nodes;
  for (Scale s : scales) {
    const auto& e = emb.at(s);
    Var<T> instances = tape.constant(slide.at(s));
    auto feats = entity_cross_attention(e.generic, instances, p.attention_for(s), head);
    tr.entity_logits[scale_index(s)] = entity_logits(feats.features, e.attributes);
    nodes.push_back(feats.features);
    tr.entity[scale_index(s)] = std::move(feats);
  }

  Var<T> all_nodes = nodes.size() == 1 ? nodes.front() : ops::vstack<T>(nodes);
  Var<T> refined = all_nodes;
  if (!cfg.ablation.no_graph) {
    tr.graph = fixed_graph ? *fixed_graph : build_entity_graph(all_nodes.value(), cfg.n_neighbors);
    tr.gat = gat_update(all_nodes, tr.graph, p.gat);
    refined = tr.gat->features;
  }

  std::size_t offset = 0;
  std::vector<Var<T>> entity_terms;
  std::vector<Var<T>> slide_terms;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const Scale s = scales[i];
    const std::size_t n = nodes[i].rows();
    auto pooled = gated_attention_pool(ops::slice_rows(refined, offset, n), p.pool);
    offset += n;
    tr.pool_weights[scale_index(s)] = pooled.weights;
    tr.slide_logits[scale_index(s)] = slide_logits(pooled.feature, emb.at(s).slide);
    Var<T> ent = tr.entity_logits[scale_index(s)];
    Var<T> sld = tr.slide_logits[scale_index(s)];
    if (p.tau_entity) {
      ent = ops::div_scalar(ent, *p.tau_entity);
      sld = ops::div_scalar(sld, p.tau);
    }
    entity_terms.push_back(ent);
    slide_terms.push_back(sld);
  }
  Var<T> fused = fuse_logits(entity_terms, slide_terms, static_cast<T>(cfg.effective_lambda()));
  tr.logits = p.tau_entity ? fused : ops::div_scalar(fused, p.tau);
  return tr;
}

template <class T>
Var<T> slide_loss(const SlideTrace<T>& tr, std::size_t label) {
  return ops::cross_entropy(tr.logits, label);
}

// Class probabilities for one slide, no gradients.
template <class T>
std::vector<T> predict(const ModelParams<T>& params, const PromptEmbeddings<T>& emb, const SlideInstances<T>& slide,
                       const RunConfig& cfg) {
  Tape<T> tape;
  auto pv = bind_params(tape, params, false);
  auto ev = as_constants(tape, emb);
  auto tr = forward_slide(tape, pv, ev, slide, cfg);
  return softmax(tr.logits.value().row(0));
}

}  // namespace maple
