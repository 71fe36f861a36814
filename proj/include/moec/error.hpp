// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace moec {

/// Failure classes; each maps onto one CLI exit code.
enum class ErrorKind { usage, data, numeric, corrupt };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Malformed input file or sidecar.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Invalid request, such as resuming a checkpoint under a different seed.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// The requested compression ratio leaves no room for a viable network.
class BudgetError : public Error {
 public:
  explicit BudgetError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// NaN gradients, divergence.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

/// Bad magic, version, checksum or truncated payload.
class CorruptArtifactError : public Error {
 public:
  explicit CorruptArtifactError(const std::string& what) : Error(ErrorKind::corrupt, what) {}
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::corrupt: return 5;
  }
  return 1;
}

}  // namespace moec
