// Copyright (C) 2026 The spring-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace spring {

/// Broad failure category. The CLI maps each category onto its exit code.
enum class ErrorKind {
  kConfig,   // bad arguments, inconsistent configuration
  kData,     // unreadable or malformed input files
  kNumeric,  // non-finite values during training or differentiation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& message) {
  return Error(ErrorKind::kConfig, message);
}
inline Error data_error(const std::string& message) {
  return Error(ErrorKind::kData, message);
}
inline Error numeric_error(const std::string& message) {
  return Error(ErrorKind::kNumeric, message);
}

}  // namespace spring
