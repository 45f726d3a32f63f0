#pragma once
//------------------------------------------------------------------------------
//
//   Copyright 2026 The ocarlab Authors
//
//   Licensed under the Apache License, Version 2.0 (the "License");
//   you may not use this file except in compliance with the License.
//   You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
//   Unless required by applicable law or agreed to in writing, software
//   distributed under the License is distributed on an "AS IS" BASIS,
//   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//   See the License for the specific language governing permissions and
//   limitations under the License.
//
//------------------------------------------------------------------------------

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ocar {

/// Dense row-major matrix of doubles. Layer weights are (out x in).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// All randomness in the library flows through explicitly seeded engines.
using Rng = std::mt19937_64;

enum class ErrorKind {
  ShapeMismatch,
  NotPositiveDefinite,
  NoConvergence,
  InvalidClassIndex,
  EmptyBatch,
  StaleInverse,
  EmptyBuffer,
  NoClassInfo,
  InsufficientClasses,
  NotSquareInput,
  DegenerateDirections,
  InvalidArgument,
  IoError,
  ConfigError,
  NonFinite,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::InvalidClassIndex: return "InvalidClassIndex";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::StaleInverse: return "StaleInverse";
    case ErrorKind::EmptyBuffer: return "EmptyBuffer";
    case ErrorKind::NoClassInfo: return "NoClassInfo";
    case ErrorKind::InsufficientClasses: return "InsufficientClasses";
    case ErrorKind::NotSquareInput: return "NotSquareInput";
    case ErrorKind::DegenerateDirections: return "DegenerateDirections";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::NonFinite: return "NonFinite";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace ocar
