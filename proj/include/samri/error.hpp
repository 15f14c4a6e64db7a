#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace samri {

enum class ErrorCode {
  TruncatedFile,
  BadMagic,
  UnsupportedDatatype,
  UnsupportedDim,
  CompressedNotSupported,
  ValueOutOfRange,
  SpecInfeasible,
  DimMismatch,
  NonFiniteInput,
  EmptyMask,
  ShapeMismatch,
  NonFiniteLoss,
  NonFiniteGradient,
  OutOfBounds,
  EmptySurface,
  AllZeroDifferences,
  IoError,
  ChecksumMismatch,
  KeyNotFound,
  KeyMismatch,
  BankMissing,
  InvalidArgument,
};

std::string_view error_code_name(ErrorCode code) noexcept;

/// Every recoverable failure in the library is reported as an Error carrying
/// a machine-readable code; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace samri
