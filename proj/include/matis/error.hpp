#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace matis {

enum class ErrorKind {
  SumMismatch,
  DimensionMismatch,
  ShapeMismatch,
  EmptyMatrix,
  NonFiniteInput,
  NonFiniteGradient,
  NonFiniteLoss,
  DivergenceDetected,
  FrameIdMismatch,
  PlacementFailure,
  ConfigInvalid,
  MissingInput,
  VersionMismatch,
  FormatError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace matis
