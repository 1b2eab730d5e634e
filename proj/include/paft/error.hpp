// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace paft {

enum class ErrorCode {
  kShapeMismatch,
  kNonFiniteResult,
  kEmptyParamSet,
  kInvalidName,
  kDuplicateName,
  kMissingParameter,
  kUnknownParameter,
  kIoError,
  kFormatError,
  kInvalidArgument,
  kInvalidProbability,
  kInvalidDensity,
  kZeroWeightSum,
  kUnsupportedMethod,
  kRecipeError,
  kEmptyBatch,
  kEmptySuite,
  kDivergenceDetected,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteResult: return "NonFiniteResult";
    case ErrorCode::kEmptyParamSet: return "EmptyParamSet";
    case ErrorCode::kInvalidName: return "InvalidName";
    case ErrorCode::kDuplicateName: return "DuplicateName";
    case ErrorCode::kMissingParameter: return "MissingParameter";
    case ErrorCode::kUnknownParameter: return "UnknownParameter";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInvalidProbability: return "InvalidProbability";
    case ErrorCode::kInvalidDensity: return "InvalidDensity";
    case ErrorCode::kZeroWeightSum: return "ZeroWeightSum";
    case ErrorCode::kUnsupportedMethod: return "UnsupportedMethod";
    case ErrorCode::kRecipeError: return "RecipeError";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kEmptySuite: return "EmptySuite";
    case ErrorCode::kDivergenceDetected: return "DivergenceDetected";
  }
  return "Unknown";
}

/// Every failure in the library is reported as a paft::Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Malformed checkpoint. `offset` is the byte position where the problem was
/// detected, or npos when the problem is tied to a tensor name instead.
class FormatError : public Error {
 public:
  static constexpr std::uint64_t npos = ~std::uint64_t{0};

  FormatError(const std::string& what, std::uint64_t offset, std::string name = {})
      : Error(ErrorCode::kFormatError, describe(what, offset, name)),
        offset_(offset),
        name_(std::move(name)) {}

  std::uint64_t offset() const noexcept { return offset_; }
  const std::string& name() const noexcept { return name_; }

 private:
  static std::string describe(const std::string& what, std::uint64_t offset,
                              const std::string& name) {
    std::string out = what;
    if (offset != npos) out += " (at byte offset " + std::to_string(offset) + ")";
    if (!name.empty()) out += " (tensor '" + name + "')";
    return out;
  }

  std::uint64_t offset_;
  std::string name_;
};

}  // namespace paft
