// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives recorded on a Tape. Row vectors are 1 x n.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "maple/numerics/functions.hpp"
#include "maple/numerics/matrix.hpp"
#include "maple/numerics/tape.hpp"

namespace maple::ops {

namespace detail {

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

template <class T, class F>
Matrix<T> map(const Matrix<T>& x, F f) {
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Matrix<T> out = maple::matmul(a.value(), b.value());
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, matmul_nt(g, t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, matmul_tn(t.value(a), g));
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  return a.tape->record("transpose", a.value().transposed(), {a},
                        [a](Tape<T>& t, const Matrix<T>& g) { t.accumulate(a, g.transposed()); });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape->record("add", std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "sub");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, detail::map(g, [](T x) { return -x; }));
  });
}

// a (n x d) + r (1 x d) broadcast over rows.
template <class T>
Var<T> add_row(Var<T> a, Var<T> r) {
  if (r.rows() != 1 || r.cols() != a.cols()) throw DimensionError("add_row: shape mismatch");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += r.value()(0, j);
  return a.tape->record("add_row", std::move(out), {a, r}, [a, r](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    if (t.requires_grad(r)) {
      Matrix<T> gr(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
      t.accumulate(r, gr);
    }
  });
}

template <class T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "hadamard");
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape->record("hadamard", std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) {
      Matrix<T> ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= t.value(b)[i];
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Matrix<T> gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= t.value(a)[i];
      t.accumulate(b, gb);
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  return a.tape->record("scale", detail::map(a.value(), [c](T x) { return c * x; }), {a},
                        [a, c](Tape<T>& t, const Matrix<T>& g) {
                          t.accumulate(a, detail::map(g, [c](T x) { return c * x; }));
                        });
}

// a / s for a 1x1 variable s.
template <class T>
Var<T> div_scalar(Var<T> a, Var<T> s) {
  if (s.value().size() != 1) throw DimensionError("div_scalar: divisor must be 1x1");
  const T sv = s.scalar();
  return a.tape->record("div_scalar", detail::map(a.value(), [sv](T x) { return x / sv; }), {a, s},
                        [a, s](Tape<T>& t, const Matrix<T>& g) {
                          const T sv = t.value(s)[0];
                          if (t.requires_grad(a)) t.accumulate(a, detail::map(g, [sv](T x) { return x / sv; }));
                          if (t.requires_grad(s)) {
                            T acc = T(0);
                            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * t.value(a)[i];
                            t.accumulate(s, Matrix<T>(1, 1, -acc / (sv * sv)));
                          }
                        });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Matrix<T> out = detail::map(a.value(), [](T x) { return std::tanh(x); });
  return a.tape->record("tanh", std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> ga = g;
    const Matrix<T>& x = t.value(a);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T y = std::tanh(x[i]);
      ga[i] *= T(1) - y * y;
    }
    t.accumulate(a, ga);
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Matrix<T> out = detail::map(a.value(), [](T x) { return maple::sigmoid(x); });
  return a.tape->record("sigmoid", std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> ga = g;
    const Matrix<T>& x = t.value(a);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T y = maple::sigmoid(x[i]);
      ga[i] *= y * (T(1) - y);
    }
    t.accumulate(a, ga);
  });
}

template <class T>
Var<T> relu(Var<T> a) {
  Matrix<T> out = detail::map(a.value(), [](T x) { return x > T(0) ? x : T(0); });
  return a.tape->record("relu", std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> ga = g;
    const Matrix<T>& x = t.value(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (!(x[i] > T(0))) ga[i] = T(0);
    t.accumulate(a, ga);
  });
}

template <class T>
Var<T> leaky_relu(Var<T> a, T slope) {
  Matrix<T> out = detail::map(a.value(), [slope](T x) { return maple::leaky_relu(x, slope); });
  return a.tape->record("leaky_relu", std::move(out), {a}, [a, slope](Tape<T>& t, const Matrix<T>& g) {
    Matrix<T> ga = g;
    const Matrix<T>& x = t.value(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (x[i] < T(0)) ga[i] *= slope;
    t.accumulate(a, ga);
  });
}

namespace detail {

template <class T>
Matrix<T> softmax_backward_rows(const Matrix<T>& y, const Matrix<T>& g) {
  Matrix<T> out(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    T inner = T(0);
    for (std::size_t j = 0; j < y.cols(); ++j) inner += g(i, j) * y(i, j);
    for (std::size_t j = 0; j < y.cols(); ++j) out(i, j) = y(i, j) * (g(i, j) - inner);
  }
  return out;
}

}  // namespace detail

template <class T>
Var<T> softmax_rows(Var<T> a) {
  const Matrix<T>& x = a.value();
  if (x.cols() == 0) throw ArgumentError("softmax of empty vector");
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto y = maple::softmax(x.row(i));
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  Tape<T>* tape = a.tape;
  const std::size_t out_id = tape->size();
  return tape->record("softmax", std::move(out), {a}, [a, out_id](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, detail::softmax_backward_rows(t.value(Var<T>{&t, out_id}), g));
  });
}

// Row-wise softmax restricted to `support[i]`; entries outside the support are 0.
template <class T>
Var<T> masked_softmax_rows(Var<T> a, const std::vector<std::vector<std::size_t>>& support) {
  const Matrix<T>& x = a.value();
  if (support.size() != x.rows()) throw DimensionError("masked_softmax: support size mismatch");
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (support[i].empty()) throw ArgumentError("masked_softmax: empty support row");
    std::vector<T> picked;
    picked.reserve(support[i].size());
    for (std::size_t j : support[i]) picked.push_back(x(i, j));
    auto y = maple::softmax(picked);
    for (std::size_t k = 0; k < y.size(); ++k) out(i, support[i][k]) = y[k];
  }
  Tape<T>* tape = a.tape;
  const std::size_t out_id = tape->size();
  // Off-support outputs are identically 0, so the dense backward is exact.
  return tape->record("masked_softmax", std::move(out), {a}, [a, out_id](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, detail::softmax_backward_rows(t.value(Var<T>{&t, out_id}), g));
  });
}

template <class T>
Var<T> layer_norm_rows(Var<T> a, T eps = T(kLayerNormEps)) {
  const Matrix<T>& x = a.value();
  if (x.cols() == 0) throw ArgumentError("layer_norm of empty vector");
  Matrix<T> out(x.rows(), x.cols());
  std::vector<T> inv_std(x.rows());
  const T n = static_cast<T>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    T mean = T(0);
    for (T v : row) mean += v;
    mean /= n;
    T var = T(0);
    for (T v : row) var += (v - mean) * (v - mean);
    var /= n;
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (row[j] - mean) * inv_std[i];
  }
  Tape<T>* tape = a.tape;
  const std::size_t out_id = tape->size();
  return tape->record("layer_norm", std::move(out), {a},
                      [a, out_id, inv_std = std::move(inv_std)](Tape<T>& t, const Matrix<T>& g) {
                        const Matrix<T>& y = t.value(Var<T>{&t, out_id});
                        const T n = static_cast<T>(y.cols());
                        Matrix<T> ga(y.rows(), y.cols());
                        for (std::size_t i = 0; i < y.rows(); ++i) {
                          T sum_g = T(0), sum_gy = T(0);
                          for (std::size_t j = 0; j < y.cols(); ++j) {
                            sum_g += g(i, j);
                            sum_gy += g(i, j) * y(i, j);
                          }
                          for (std::size_t j = 0; j < y.cols(); ++j)
                            ga(i, j) = inv_std[i] / n * (n * g(i, j) - sum_g - y(i, j) * sum_gy);
                        }
                        t.accumulate(a, ga);
                      });
}

// Each row divided by its L2 norm; rows with norm < 1e-12 map to zero.
template <class T>
Var<T> l2_normalize_rows(Var<T> a) {
  const Matrix<T>& x = a.value();
  Matrix<T> out(x.rows(), x.cols());
  std::vector<T> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    norms[i] = l2_norm(x.row(i));
    if (norms[i] < T(kCosineNormFloor)) continue;
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / norms[i];
  }
  Tape<T>* tape = a.tape;
  const std::size_t out_id = tape->size();
  return tape->record("l2_normalize", std::move(out), {a},
                      [a, out_id, norms = std::move(norms)](Tape<T>& t, const Matrix<T>& g) {
                        const Matrix<T>& y = t.value(Var<T>{&t, out_id});
                        Matrix<T> ga(y.rows(), y.cols());
                        for (std::size_t i = 0; i < y.rows(); ++i) {
                          if (norms[i] < T(kCosineNormFloor)) continue;
                          const T yg = dot(y.row(i), g.row(i));
                          for (std::size_t j = 0; j < y.cols(); ++j)
                            ga(i, j) = (g(i, j) - y(i, j) * yg) / norms[i];
                        }
                        t.accumulate(a, ga);
                      });
}

// out(i, j) = cos(a_i, b_j). Zero-norm rows give 0 and no gradient.
template <class T>
Var<T> cosine_matrix(Var<T> a, Var<T> b) {
  const Matrix<T>& A = a.value();
  const Matrix<T>& B = b.value();
  if (A.cols() != B.cols()) throw DimensionError("cosine: dimension mismatch");
  Matrix<T> out(A.rows(), B.rows());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < B.rows(); ++j) out(i, j) = cosine_similarity(A.row(i), B.row(j));
  Tape<T>* tape = a.tape;
  const std::size_t out_id = tape->size();
  return tape->record("cosine", std::move(out), {a, b}, [a, b, out_id](Tape<T>& t, const Matrix<T>& g) {
    const Matrix<T>& A = t.value(a);
    const Matrix<T>& B = t.value(b);
    const Matrix<T>& C = t.value(Var<T>{&t, out_id});
    std::vector<T> na(A.rows()), nb(B.rows());
    for (std::size_t i = 0; i < A.rows(); ++i) na[i] = l2_norm(A.row(i));
    for (std::size_t j = 0; j < B.rows(); ++j) nb[j] = l2_norm(B.row(j));
    Matrix<T> ga(A.rows(), A.cols()), gb(B.rows(), B.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      if (na[i] < T(kCosineNormFloor)) continue;
      for (std::size_t j = 0; j < B.rows(); ++j) {
        if (nb[j] < T(kCosineNormFloor)) continue;
        const T gij = g(i, j);
        if (gij == T(0)) continue;
        const T c = C(i, j);
        const T inv = T(1) / (na[i] * nb[j]);
        for (std::size_t k = 0; k < A.cols(); ++k) {
          ga(i, k) += gij * (B(j, k) * inv - c * A(i, k) / (na[i] * na[i]));
          gb(j, k) += gij * (A(i, k) * inv - c * B(j, k) / (nb[j] * nb[j]));
        }
      }
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

// out(i, 0) = cos(a_i, b_i).
template <class T>
Var<T> cosine_rowwise(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "cosine_rowwise");
  const Matrix<T>& A = a.value();
  const Matrix<T>& B = b.value();
  Matrix<T> out(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) out(i, 0) = cosine_similarity(A.row(i), B.row(i));
  Tape<T>* tape = a.tape;
  const std::size_t out_id = tape->size();
  return tape->record("cosine_rowwise", std::move(out), {a, b}, [a, b, out_id](Tape<T>& t, const Matrix<T>& g) {
    const Matrix<T>& A = t.value(a);
    const Matrix<T>& B = t.value(b);
    const Matrix<T>& C = t.value(Var<T>{&t, out_id});
    Matrix<T> ga(A.rows(), A.cols()), gb(B.rows(), B.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      const T na = l2_norm(A.row(i));
      const T nb = l2_norm(B.row(i));
      if (na < T(kCosineNormFloor) || nb < T(kCosineNormFloor)) continue;
      const T gi = g(i, 0);
      const T c = C(i, 0);
      const T inv = T(1) / (na * nb);
      for (std::size_t k = 0; k < A.cols(); ++k) {
        ga(i, k) = gi * (B(i, k) * inv - c * A(i, k) / (na * na));
        gb(i, k) = gi * (A(i, k) * inv - c * B(i, k) / (nb * nb));
      }
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

// Column means: n x d -> 1 x d.
template <class T>
Var<T> mean_rows(Var<T> a) {
  const Matrix<T>& x = a.value();
  if (x.rows() == 0) throw ArgumentError("mean_rows of empty matrix");
  Matrix<T> out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
  const T inv = T(1) / static_cast<T>(x.rows());
  for (auto& v : out.values()) v *= inv;
  return a.tape->record("mean_rows", std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    const std::size_t n = t.value(a).rows();
    const T inv = T(1) / static_cast<T>(n);
    Matrix<T> ga(n, g.cols());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = g(0, j) * inv;
    t.accumulate(a, ga);
  });
}

template <class T>
Var<T> vstack(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ArgumentError("vstack of nothing");
  std::vector<Matrix<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  Matrix<T> out = maple::vstack<T>(values);
  std::vector<Var<T>> keep(parts.begin(), parts.end());
  return parts.front().tape->record("vstack", std::move(out), parts, [keep](Tape<T>& t, const Matrix<T>& g) {
    std::size_t r = 0;
    for (const auto& p : keep) {
      const std::size_t n = t.value(p).rows();
      if (t.requires_grad(p)) t.accumulate(p, g.slice_rows(r, n));
      r += n;
    }
  });
}

template <class T>
Var<T> hstack(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ArgumentError("hstack of nothing");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("hstack row mismatch");
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, c0 + j) = p.value()(i, j);
    c0 += p.cols();
  }
  std::vector<Var<T>> keep(parts.begin(), parts.end());
  return parts.front().tape->record("hstack", std::move(out), parts, [keep](Tape<T>& t, const Matrix<T>& g) {
    std::size_t c0 = 0;
    for (const auto& p : keep) {
      const std::size_t w = t.value(p).cols();
      if (t.requires_grad(p)) {
        Matrix<T> gp(g.rows(), w);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gp(i, j) = g(i, c0 + j);
        t.accumulate(p, gp);
      }
      c0 += w;
    }
  });
}

template <class T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) throw DimensionError("slice_rows out of range");
  return a.tape->record("slice_rows", a.value().slice_rows(begin, count), {a},
                        [a, begin](Tape<T>& t, const Matrix<T>& g) {
                          const Matrix<T>& x = t.value(a);
                          Matrix<T> ga(x.rows(), x.cols());
                          std::copy(g.values().begin(), g.values().end(), ga.data() + begin * x.cols());
                          t.accumulate(a, ga);
                        });
}

template <class T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> indices) {
  for (std::size_t i : indices)
    if (i >= a.rows()) throw DimensionError("gather_rows index out of range");
  Matrix<T> out = a.value().gather_rows(indices);
  return a.tape->record("gather_rows", std::move(out), {a},
                        [a, indices = std::move(indices)](Tape<T>& t, const Matrix<T>& g) {
                          const Matrix<T>& x = t.value(a);
                          Matrix<T> ga(x.rows(), x.cols());
                          for (std::size_t i = 0; i < indices.size(); ++i)
                            for (std::size_t j = 0; j < x.cols(); ++j) ga(indices[i], j) += g(i, j);
                          t.accumulate(a, ga);
                        });
}

// -log softmax(logits)[label] for a 1 x C row.
template <class T>
Var<T> cross_entropy(Var<T> logits, std::size_t label) {
  const Matrix<T>& x = logits.value();
  if (x.rows() != 1) throw DimensionError("cross_entropy expects a single row of logits");
  if (label >= x.cols()) throw ArgumentError("cross_entropy label out of range");
  auto p = maple::softmax(x.row(0));
  T peak = x(0, 0);
  for (T v : x.row(0)) peak = std::max(peak, v);
  T total = T(0);
  for (T v : x.row(0)) total += std::exp(v - peak);
  const T loss = -(x(0, label) - peak - std::log(total));
  return logits.tape->record("cross_entropy", Matrix<T>(1, 1, loss), {logits},
                             [logits, label, p = std::move(p)](Tape<T>& t, const Matrix<T>& g) {
                               Matrix<T> gl(1, p.size());
                               for (std::size_t c = 0; c < p.size(); ++c)
                                 gl(0, c) = g[0] * (p[c] - (c == label ? T(1) : T(0)));
                               t.accumulate(logits, gl);
                             });
}

}  // namespace maple::ops
