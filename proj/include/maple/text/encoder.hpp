// SPDX-License-Identifier: Apache-2.0
//
// Frozen text-encoder stub. A prompt is the learnable context rows V followed
// by the prompt's token vectors; the encoder mean-pools them, applies a frozen
// projection, layer-normalizes and L2-normalizes. Only V receives gradients.

#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "maple/errors.hpp"
#include "maple/numerics/matrix.hpp"
#include "maple/numerics/ops.hpp"
#include "maple/numerics/random.hpp"

namespace maple {

inline constexpr std::size_t kDefaultContextVectors = 16;
inline constexpr double kContextInitStd = 0.02;
inline constexpr std::uint64_t kDefaultTextEncoderSeed = 0;

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    std::size_t b = 0, e = cur.size();
    auto punct = [](unsigned char c) { return std::ispunct(c) && c != '-'; };
    while (b < e && punct(static_cast<unsigned char>(cur[b]))) ++b;
    while (e > b && punct(static_cast<unsigned char>(cur[e - 1]))) --e;
    if (e > b) tokens.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return tokens;
}

class FrozenTextEncoder {
 public:
  FrozenTextEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim == 0) throw ConfigError("text encoder dimension must be positive");
    Rng rng(derive_seed(seed, "text-projection"));
    projection_ = rng.normal_matrix<double>(dim, dim, 1.0 / std::sqrt(static_cast<double>(dim)));
  }

  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  const Matrix<double>& projection() const { return projection_; }

  // Seeded per-token vector with i.i.d. N(0, 1/d) entries (norm close to 1).
  std::vector<double> token_vector(std::string_view token) const {
    Rng rng(splitmix64(fnv1a64(token) ^ derive_seed(seed_, "token")));
    std::vector<double> v(dim_);
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim_));
    for (double& x : v) x = rng.normal(0.0, sd);
    return v;
  }

  // T x d matrix of token vectors for the whitespace tokens of `text`.
  template <class T = double>
  Matrix<T> tokenize_embed(std::string_view text) const {
    const auto tokens = tokenize(text);
    if (tokens.empty()) throw ArgumentError("cannot encode empty text");
    Matrix<T> out(tokens.size(), dim_);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto v = token_vector(tokens[i]);
      for (std::size_t j = 0; j < dim_; ++j) out(i, j) = static_cast<T>(v[j]);
    }
    return out;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  Matrix<double> projection_;
};

// Token statistics of a batch of texts: per-text sums of token rows and token counts.
struct TokenBatch {
  Matrix<double> token_sum;           // n x d
  std::vector<std::size_t> token_count;

  std::size_t size() const { return token_count.size(); }

  static TokenBatch from_texts(const FrozenTextEncoder& enc, const std::vector<std::string>& texts) {
    TokenBatch b{Matrix<double>(texts.size(), enc.dim()), {}};
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto tokens = enc.tokenize_embed<double>(texts[i]);
      for (std::size_t r = 0; r < tokens.rows(); ++r)
        for (std::size_t j = 0; j < enc.dim(); ++j) b.token_sum(i, j) += tokens(r, j);
      b.token_count.push_back(tokens.rows());
    }
    return b;
  }
};

// Encodes every text of `batch` with context rows `context` (M x d); pass an
// invalid Var (tape == nullptr) to encode without context. Returns n x d unit rows.
template <class T>
Var<T> encode_batch(Tape<T>& tape, Var<T> context, const TokenBatch& batch, const FrozenTextEncoder& enc) {
  const std::size_t n = batch.size();
  const std::size_t d = enc.dim();
  const std::size_t m = context.tape ? context.rows() : 0;
  if (context.tape && context.cols() != d) throw DimensionError("context vectors have the wrong dimension");
  Matrix<T> offsets(n, d);
  Matrix<T> weights(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double denom = static_cast<double>(m + batch.token_count[i]);
    weights(i, 0) = static_cast<T>(static_cast<double>(m) / denom);
    for (std::size_t j = 0; j < d; ++j) offsets(i, j) = static_cast<T>(batch.token_sum(i, j) / denom);
  }
  Var<T> pooled = tape.constant(std::move(offsets));
  if (m > 0) {
    // mean over concat(V, tokens) = m/(m+t) * mean(V) + sum(tokens)/(m+t)
    Var<T> ctx_mean = ops::mean_rows(context);
    pooled = ops::add(ops::matmul(tape.constant(std::move(weights)), ctx_mean), pooled);
  }
  Var<T> projected = ops::matmul(pooled, tape.constant(enc.projection().template cast<T>()));
  return ops::l2_normalize_rows(ops::layer_norm_rows(projected));
}

// Single prompt: context rows V followed by `tokens` (T x d).
template <class T>
Var<T> encode_prompt(Tape<T>& tape, Var<T> context, const Matrix<T>& tokens, const FrozenTextEncoder& enc) {
  if (tokens.rows() == 0) throw ArgumentError("cannot encode a prompt without tokens");
  TokenBatch b{Matrix<double>(1, enc.dim()), {tokens.rows()}};
  for (std::size_t r = 0; r < tokens.rows(); ++r)
    for (std::size_t j = 0; j < enc.dim(); ++j) b.token_sum(0, j) += static_cast<double>(tokens(r, j));
  return encode_batch(tape, context, b, enc);
}

// Value-only convenience wrapper.
template <class T>
Matrix<T> encode_prompt(const Matrix<T>& context, const Matrix<T>& tokens, const FrozenTextEncoder& enc) {
  Tape<T> tape;
  Var<T> v = context.rows() ? tape.constant(context) : Var<T>{};
  return encode_prompt(tape, v, tokens, enc).value();
}

}  // namespace maple
