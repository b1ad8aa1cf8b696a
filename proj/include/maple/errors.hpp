// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by every module.

#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace maple {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument to a numeric primitive (empty input, shape mismatch).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

// Non-finite value produced or ingested. `primitive` names the op that produced it.
class NumericError : public Error {
 public:
  NumericError(std::string primitive, const std::string& what)
      : Error(what), primitive_(std::move(primitive)) {}
  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

// Invalid configuration value (out-of-range ratio, unknown key, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data.
class FormatError : public Error {
 public:
  enum class Kind { io, magic, version, dimension, truncated, non_finite, empty, schema };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// LLM backend failure. Carries whatever was assembled before the failure.
class BackendError : public Error {
 public:
  explicit BackendError(const std::string& what, std::vector<std::string> partial = {})
      : Error(what), partial_(std::move(partial)) {}
  const std::vector<std::string>& partial() const noexcept { return partial_; }

 private:
  std::vector<std::string> partial_;
};

// Training diverged.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Command-line misuse; maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace maple
