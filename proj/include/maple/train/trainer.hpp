// SPDX-License-Identifier: Apache-2.0
//
// Full-batch AdamW training with early stopping on validation loss.

#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "maple/eval/metrics.hpp"
#include "maple/model/forward.hpp"
#include "maple/model/params.hpp"
#include "maple/prompt/pack.hpp"
#include "maple/text/embeddings.hpp"

namespace maple {

// Prompt embeddings either come from text through the frozen encoder (the
// context vectors then train) or from a precomputed bundle (held fixed).
class PromptSource {
 public:
  static PromptSource from_pack(const PromptPack& pack, std::size_t dim, std::size_t n_entities,
                                std::uint64_t encoder_seed = kDefaultTextEncoderSeed) {
    PromptSource src;
    const PromptPack truncated = pack.truncated(n_entities);
    src.encoder_.emplace(dim, encoder_seed);
    src.tokens_ = TokenizedPack::from_pack(truncated, *src.encoder_);
    src.dim_ = dim;
    src.classes_ = pack.subtypes.size();
    // Region prompts carry no context, so they are fixed for the whole run.
    src.fixed_ = encode_pack(Matrix<float>(), Matrix<float>(), *src.tokens_, *src.encoder_);
    return src;
  }

  static PromptSource from_embeddings(const PromptEmbeddings<float>& emb, std::size_t n_entities) {
    PromptSource src;
    src.fixed_ = truncate_entities(emb, n_entities);
    src.dim_ = emb.at(Scale::low).generic.cols();
    src.classes_ = emb.at(Scale::low).slide.rows();
    return src;
  }

  bool trainable() const { return tokens_.has_value(); }
  std::size_t dim() const { return dim_; }
  std::size_t num_classes() const { return classes_; }

  // Embeddings that never depend on parameters; only the region rows are
  // meaningful for a trainable source.
  const PromptEmbeddings<float>& fixed() const { return fixed_; }

  template <class T>
  EmbeddingVars<T> bind(Tape<T>& tape, Var<T> context, Var<T> slide_context) const {
    if (!tokens_) return as_constants(tape, cast_embeddings<float, T>(fixed_));
    return encode_pack(tape, context, slide_context, *tokens_, *encoder_);
  }

  template <class T>
  PromptEmbeddings<T> values(const ModelParams<T>& p) const {
    if (!tokens_) return cast_embeddings<float, T>(fixed_);
    return encode_pack(p.context, p.slide_context ? *p.slide_context : p.context, *tokens_, *encoder_);
  }

 private:
  std::optional<FrozenTextEncoder> encoder_;
  std::optional<TokenizedPack> tokens_;
  PromptEmbeddings<float> fixed_;
  std::size_t dim_ = 0;
  std::size_t classes_ = 0;
};

class AdamW {
 public:
  explicit AdamW(const OptimizerConfig& cfg) : cfg_(cfg) {}

  // One update over parameters and gradients visited in the same order.
  // Temperatures are not decayed and are clamped after the step.
  void step(ModelParams<float>& params, const std::vector<Matrix<float>>& grads) {
    ++t_;
    const double lr = cfg_.lr;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t i = 0;
    params.for_each([&](const std::string& name, Matrix<float>& theta) {
      if (m_.size() <= i) {
        m_.emplace_back(theta.rows(), theta.cols());
        v_.emplace_back(theta.rows(), theta.cols());
      }
      const bool temperature = name == "tau" || name == "tau_entity";
      const Matrix<float>& g = grads[i];
      auto w = theta.values();
      auto m = m_[i].values();
      auto v = v_[i].values();
      auto gv = g.values();
      for (std::size_t k = 0; k < w.size(); ++k) {
        double x = w[k];
        if (!temperature) x *= 1.0 - lr * cfg_.weight_decay;
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gv[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gv[k] * gv[k];
        x -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
        if (temperature) x = std::clamp(x, kMinTemperature, kMaxTemperature);
        w[k] = static_cast<float>(x);
      }
      ++i;
    });
  }

  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Matrix<double>> m_;
  std::vector<Matrix<double>> v_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  std::optional<double> val_auc;
};

struct TrainResult {
  ModelParams<float> params;  // best validation loss
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

struct Evaluation {
  double loss = 0;
  Matrix<double> probabilities;  // N x C
  std::vector<std::size_t> labels;
};

inline Evaluation evaluate(const ModelParams<float>& params, const PromptSource& source,
                           const std::vector<SlideInstances<float>>& slides, const RunConfig& cfg) {
  Evaluation ev{0.0, Matrix<double>(slides.size(), source.num_classes()), {}};
  const PromptEmbeddings<float> emb = source.values(params);
  for (std::size_t i = 0; i < slides.size(); ++i) {
    Tape<float> tape;
    auto pv = bind_params(tape, params, false);
    auto trace = forward_slide(tape, pv, as_constants(tape, emb), slides[i], cfg);
    ev.loss += static_cast<double>(slide_loss(trace, slides[i].label).scalar());
    const auto p = softmax(trace.logits.value().row(0));
    for (std::size_t c = 0; c < p.size(); ++c) ev.probabilities(i, c) = p[c];
    ev.labels.push_back(slides[i].label);
  }
  if (!slides.empty()) ev.loss /= static_cast<double>(slides.size());
  return ev;
}

inline std::optional<double> auc_or_nothing(const Evaluation& ev) {
  if (ev.labels.size() < 2) return std::nullopt;
  return compute_metrics(ev.probabilities, ev.labels).auc;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Every epoch takes one step on the loss averaged over all training slides.
// Early stopping watches validation loss (training loss when there is no
// validation split) and the parameters of the best epoch are returned.
inline TrainResult train(const PromptSource& source, const std::vector<SlideInstances<float>>& train_set,
                         const std::vector<SlideInstances<float>>& val_set, const RunConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw ArgumentError("training split is empty");
  ModelParams<float> params = init_params<float>(source.dim(), cfg);
  AdamW opt(cfg.optimizer);
  TrainResult result{params, {}, 0, false};
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  const float inv_n = 1.0f / static_cast<float>(train_set.size());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Tape<float> text;
    Var<float> ctx = text.variable(params.context);
    Var<float> slide_ctx = params.slide_context ? text.variable(*params.slide_context) : ctx;
    const EmbeddingVars<float> emb_vars = source.bind(text, ctx, slide_ctx);
    const PromptEmbeddings<float> emb = values_of(emb_vars);

    std::vector<Matrix<float>> grads;
    params.for_each([&](const std::string&, const Matrix<float>& m) { grads.emplace_back(m.rows(), m.cols()); });
    std::vector<std::pair<Var<float>, Matrix<float>>> emb_grads;
    double loss_sum = 0;

    for (const auto& slide : train_set) {
      Tape<float> tape;
      auto pv = bind_params(tape, params, true);
      EmbeddingVars<float> ev = as_constants(tape, emb);
      if (source.trainable()) {
        for (auto& sc : ev.scales) {
          sc.generic = tape.variable(sc.generic.value());
          for (auto& a : sc.attributes) a = tape.variable(a.value());
          sc.slide = tape.variable(sc.slide.value());
        }
      }
      auto trace = forward_slide(tape, pv, ev, slide, cfg);
      Var<float> loss = slide_loss(trace, slide.label);
      const double lv = static_cast<double>(loss.scalar());
      if (!std::isfinite(lv)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": loss on slide " + slide.id +
                              " is " + std::to_string(lv) + ", tau = " + std::to_string(params.tau[0]));
      }
      loss_sum += lv;
      tape.backward(loss);
      std::size_t i = 0;
      pv.for_each([&](const std::string&, const Var<float>& v) {
        auto dst = grads[i++].values();
        const Matrix<float> g = tape.grad(v);
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += inv_n * g[k];
      });
      if (source.trainable()) {
        // Embedding gradients flow back into the context vectors on the text tape.
        std::size_t j = 0;
        auto add = [&](Var<float> on_text, Var<float> on_slide) {
          if (emb_grads.size() <= j) emb_grads.emplace_back(on_text, Matrix<float>(on_text.rows(), on_text.cols()));
          auto dst = emb_grads[j++].second.values();
          const Matrix<float> g = tape.grad(on_slide);
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += inv_n * g[k];
        };
        for (Scale s : kAllScales) {
          const auto& t = emb_vars.at(s);
          const auto& l = ev.at(s);
          add(t.generic, l.generic);
          for (std::size_t c = 0; c < t.attributes.size(); ++c) add(t.attributes[c], l.attributes[c]);
          add(t.slide, l.slide);
        }
      }
    }

    if (source.trainable()) {
      text.backward(emb_grads);
      grads[0] = text.grad(ctx);
      if (params.slide_context) grads[1] = text.grad(slide_ctx);
    }
    opt.step(params, grads);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    double monitored = rec.train_loss;
    if (!val_set.empty()) {
      const Evaluation ev = evaluate(params, source, val_set, cfg);
      if (!std::isfinite(ev.loss)) {
        throw DivergenceError("validation loss is not finite at epoch " + std::to_string(epoch));
      }
      rec.val_loss = ev.loss;
      rec.val_auc = auc_or_nothing(ev);
      monitored = ev.loss;
    } else {
      rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (monitored < best) {
      best = monitored;
      result.params = params;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

// Columns: epoch,train_loss,val_loss,val_auc
inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,train_loss,val_loss,val_auc\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,", r.epoch, r.train_loss, r.val_loss);
    out << buf;
    if (r.val_auc) {
      std::snprintf(buf, sizeof buf, "%.9g", *r.val_auc);
      out << buf;
    } else {
      out << "nan";
    }
    out << '\n';
  }
}

}  // namespace maple
