#include "ostk/error.hpp"

namespace ostk {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::FileNotFound: return "FileNotFound";
    case ErrorKind::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::CorruptImage: return "CorruptImage";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidTarget: return "InvalidTarget";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::WeightsNotFound: return "WeightsNotFound";
    case ErrorKind::ArchitectureMismatch: return "ArchitectureMismatch";
    case ErrorKind::LoadFailure: return "LoadFailure";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorKind::InferenceFailure: return "InferenceFailure";
    case ErrorKind::SelectorParseError: return "SelectorParseError";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::KeyMismatch: return "KeyMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::RangeError: return "RangeError";
    case ErrorKind::NoTargetMatched: return "NoTargetMatched";
    case ErrorKind::UsageError: return "UsageError";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace ostk
