// SPDX-License-Identifier: Apache-2.0
//
// Scalar and vector primitives shared by the tape ops and by the
// parameter-free stages (selection, graph construction, metrics).

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "maple/errors.hpp"

namespace maple {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kCosineNormFloor = 1e-12;

template <class T>
std::vector<T> softmax(std::span<const T> v) {
  if (v.empty()) throw ArgumentError("softmax of empty vector");
  const T peak = *std::max_element(v.begin(), v.end());
  std::vector<T> out(v.size());
  T total = T(0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (T& x : out) x /= total;
  return out;
}

template <class T>
std::vector<T> softmax(const std::vector<T>& v) {
  return softmax(std::span<const T>(v));
}

// Population-variance normalization without affine parameters.
template <class T>
std::vector<T> layer_norm(std::span<const T> x, T eps = T(kLayerNormEps)) {
  if (x.empty()) throw ArgumentError("layer_norm of empty vector");
  const T n = static_cast<T>(x.size());
  T mean = T(0);
  for (T v : x) mean += v;
  mean /= n;
  T var = T(0);
  for (T v : x) var += (v - mean) * (v - mean);
  var /= n;
  const T inv = T(1) / std::sqrt(var + eps);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv;
  return out;
}

template <class T>
std::vector<T> layer_norm(const std::vector<T>& x, T eps = T(kLayerNormEps)) {
  return layer_norm(std::span<const T>(x), eps);
}

template <class T>
T dot(std::span<const T> u, std::span<const T> v) {
  T acc = T(0);
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

template <class T>
T l2_norm(std::span<const T> u) {
  return std::sqrt(dot(u, u));
}

// Returns 0 when either vector has norm below 1e-12.
template <class T>
T cosine_similarity(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) throw DimensionError("cosine_similarity length mismatch");
  const T nu = l2_norm(u);
  const T nv = l2_norm(v);
  if (nu < T(kCosineNormFloor) || nv < T(kCosineNormFloor)) return T(0);
  return dot(u, v) / (nu * nv);
}

template <class T>
T cosine_similarity(const std::vector<T>& u, const std::vector<T>& v) {
  return cosine_similarity(std::span<const T>(u), std::span<const T>(v));
}

template <class T>
T leaky_relu(T x, T slope) {
  return x >= T(0) ? x : slope * x;
}

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace maple
