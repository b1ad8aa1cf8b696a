// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over dense matrices. A Tape records every primitive
// application with the activations its backward pass needs; Var is a cheap
// handle into it. Gradients are accumulated in reverse record order, so a
// single-threaded replay is bit-deterministic.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maple/errors.hpp"
#include "maple/numerics/matrix.hpp"

namespace maple {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const { return tape->value(*this); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  T scalar() const { return value()[0]; }
};

template <class T>
class Tape {
 public:
  // Receives the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Tape&, const Matrix<T>&)>;

  explicit Tape(bool checked = false) : checked_(checked) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool checked() const noexcept { return checked_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Leaf that never receives a gradient (data, frozen weights).
  Var<T> constant(Matrix<T> value) { return push("constant", std::move(value), false, {}); }

  // Leaf whose gradient is tracked (trainable parameters, seeded inputs).
  Var<T> variable(Matrix<T> value) { return push("variable", std::move(value), true, {}); }

  const Matrix<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  const char* op_name(Var<T> v) const { return nodes_[v.id].op; }

  // Gradient of the last backward pass; zeros if the node was never reached.
  Matrix<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty() && !n.value.empty()) return Matrix<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Records an op output. `backward` is dropped when no parent needs a gradient.
  Var<T> record(const char* op, Matrix<T> value, std::initializer_list<Var<T>> parents,
                BackwardFn backward) {
    bool needs = false;
    for (Var<T> p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push(op, std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  Var<T> record(const char* op, Matrix<T> value, std::span<const Var<T>> parents,
                BackwardFn backward) {
    bool needs = false;
    for (Var<T> p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push(op, std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  // Adds `g` into the gradient of `v` if it is tracked.
  void accumulate(Var<T> v, const Matrix<T>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  // Reverse pass from a 1x1 output.
  void backward(Var<T> output) {
    if (value(output).size() != 1) throw ArgumentError("backward from non-scalar output");
    Matrix<T> seed(1, 1, T(1));
    std::pair<Var<T>, Matrix<T>> s{output, std::move(seed)};
    backward(std::span<const std::pair<Var<T>, Matrix<T>>>(&s, 1));
  }

  // Reverse pass with explicit output gradients, e.g. gradients of
  // downstream losses computed on another tape.
  void backward(std::span<const std::pair<Var<T>, Matrix<T>>> seeds) {
    for (Node& n : nodes_) n.grad = Matrix<T>();
    std::size_t top = 0;
    for (const auto& [v, g] : seeds) {
      if (!g.same_shape(value(v))) throw DimensionError("backward seed shape mismatch");
      accumulate(v, g);
      top = std::max(top, v.id + 1);
    }
    for (std::size_t i = top; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      if (checked_ && !n.grad.all_finite()) {
        throw NumericError(n.op, std::string("non-finite gradient flowing into ") + n.op);
      }
      // Parents always have smaller ids, so this reference stays valid.
      const Matrix<T>& g = n.grad;
      n.backward(*this, g);
    }
  }

 private:
  struct Node {
    const char* op;
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad;
    BackwardFn backward;
  };

  Var<T> push(const char* op, Matrix<T> value, bool requires_grad, BackwardFn backward) {
    if (checked_ && !value.all_finite()) {
      throw NumericError(op, std::string("non-finite value produced by ") + op);
    }
    nodes_.push_back(Node{op, std::move(value), Matrix<T>(), requires_grad, std::move(backward)});
    return Var<T>{this, nodes_.size() - 1};
  }

  bool checked_;
  std::vector<Node> nodes_;
};

}  // namespace maple
