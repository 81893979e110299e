#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ostk {

enum class ErrorKind {
  // imaging
  FileNotFound,
  UnsupportedFormat,
  CorruptImage,
  IoError,
  InvalidTarget,
  NonFiniteInput,
  // network
  WeightsNotFound,
  ArchitectureMismatch,
  LoadFailure,
  ShapeError,
  NonFiniteActivation,
  InferenceFailure,
  SelectorParseError,
  // losses / optimization
  ShapeMismatch,
  KeyMismatch,
  NonFiniteLoss,
  // blending
  RangeError,
  // pipeline / cli
  NoTargetMatched,
  UsageError,
  InvalidConfig,
};

std::string_view to_string(ErrorKind kind) noexcept;

// All library failures are reported through this one exception type; callers
// dispatch on kind() (the CLI maps kinds to exit codes).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ostk
