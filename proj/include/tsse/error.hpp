// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tsse {

enum class ErrorKind {
  kInvalidArgument,
  kUnsupportedRate,
  kShapeMismatch,
  kDegenerateInput,
  kDegenerateReference,
  kCodecAdapter,
  kConfiguration,
  kIo,
  kTraining,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries one of the ErrorKind
/// categories so callers (and the CLI exit-code mapping) can dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kUnsupportedRate: return "unsupported-rate";
    case ErrorKind::kShapeMismatch: return "shape-mismatch";
    case ErrorKind::kDegenerateInput: return "degenerate-input";
    case ErrorKind::kDegenerateReference: return "degenerate-reference";
    case ErrorKind::kCodecAdapter: return "codec-adapter-error";
    case ErrorKind::kConfiguration: return "configuration-error";
    case ErrorKind::kIo: return "io-error";
    case ErrorKind::kTraining: return "training-error";
  }
  return "unknown";
}

#define TSSE_CHECK(cond, kind, msg)                 \
  do {                                              \
    if (!(cond)) throw ::tsse::Error((kind), (msg)); \
  } while (0)

}  // namespace tsse
