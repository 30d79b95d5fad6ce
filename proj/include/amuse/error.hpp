// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace amuse {

/// Shapes that do not chain or do not match.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf encountered, or an iterative method failed to converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration value or unknown key. Maps to exit status 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unreadable binary container (IDX, checkpoint).
class FormatError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch, version };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace amuse
