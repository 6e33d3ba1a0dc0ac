#include "matis/error.hpp"

namespace matis {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::SumMismatch: return "SumMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyMatrix: return "EmptyMatrix";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::FrameIdMismatch: return "FrameIdMismatch";
    case ErrorKind::PlacementFailure: return "PlacementFailure";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::MissingInput: return "MissingInput";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::FormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace matis
