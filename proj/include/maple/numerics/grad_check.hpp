// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "maple/errors.hpp"
#include "maple/numerics/matrix.hpp"
#include "maple/numerics/tape.hpp"

namespace maple {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t param = 0;  // index of the worst parameter matrix
  std::size_t entry = 0;  // flat index inside it
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t evaluated = 0;
};

// Compares tape gradients of a scalar function against central differences
// for every entry of every parameter matrix:
//   max_p |analytic - numeric| / max(1, |numeric|).
// `f(tape, vars)` must build the function on `tape` and return a 1x1 Var.
// Runs on a checked tape so a non-finite intermediate raises NumericError
// naming the primitive that produced it.
template <class F>
GradCheckResult grad_check(F&& f, std::vector<Matrix<double>> params, double eps = 1e-6) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw ConfigError("grad_check step must lie in [1e-7, 1e-4]");

  std::vector<Matrix<double>> analytic;
  {
    Tape<double> tape(true);
    std::vector<Var<double>> vars;
    for (const auto& p : params) vars.push_back(tape.variable(p));
    Var<double> out = f(tape, std::span<const Var<double>>(vars));
    if (out.value().size() != 1) throw ArgumentError("grad_check needs a scalar function");
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  auto evaluate = [&](const std::vector<Matrix<double>>& values) {
    Tape<double> tape(true);
    std::vector<Var<double>> vars;
    for (const auto& p : values) vars.push_back(tape.constant(p));
    return f(tape, std::span<const Var<double>>(vars)).scalar();
  };

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double original = params[p][i];
      params[p][i] = original + eps;
      const double up = evaluate(params);
      params[p][i] = original - eps;
      const double down = evaluate(params);
      params[p][i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[p][i] - numeric) / std::max(1.0, std::abs(numeric));
      ++result.evaluated;
      if (result.evaluated == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.param = p;
        result.entry = i;
        result.analytic = analytic[p][i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace maple
