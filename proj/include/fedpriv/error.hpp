// Copyright 2026 The fedpriv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedpriv {

enum class ErrorCode {
  kInvalidValue,
  kInvalidArgument,
  kEmptyDataset,
  kInvalidScale,
  kGaussianRequiresDelta,
  kBudgetExceeded,
  kNotAdjacent,
  kShapeError,
  kLabelError,
  kCacheError,
  kInvalidGradient,
  kProtocolError,
  kDecodeError,
  kFormatError,
  kInvalidFraction,
  kTransportError,
  kTimedOut,
  kIoError,
  kConfigError,
};

constexpr std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidValue: return "InvalidValue";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kInvalidScale: return "InvalidScale";
    case ErrorCode::kGaussianRequiresDelta: return "GaussianRequiresDelta";
    case ErrorCode::kBudgetExceeded: return "BudgetExceeded";
    case ErrorCode::kNotAdjacent: return "NotAdjacent";
    case ErrorCode::kShapeError: return "ShapeError";
    case ErrorCode::kLabelError: return "LabelError";
    case ErrorCode::kCacheError: return "CacheError";
    case ErrorCode::kInvalidGradient: return "InvalidGradient";
    case ErrorCode::kProtocolError: return "ProtocolError";
    case ErrorCode::kDecodeError: return "DecodeError";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kInvalidFraction: return "InvalidFraction";
    case ErrorCode::kTransportError: return "TransportError";
    case ErrorCode::kTimedOut: return "TimedOut";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

// Every failure in the library is reported as an Error carrying a code that
// callers (and the CLI exit-code mapping) can switch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fedpriv
