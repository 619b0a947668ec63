#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uae {

enum class ErrorCode {
  MismatchedLengths,
  DegenerateGeometry,
  BadMagic,
  TruncatedFile,
  UnsupportedVersion,
  DimensionOverflow,
  ChecksumMismatch,
  GeometryMismatch,
  OutOfBounds,
  EmptyMask,
  EmptyBox,
  EmptyBatch,
  NonUnitInput,
  EmptyClass,
  SingleEmptyBatch,
  ConstantVolume,
  VolumeTooSmall,
  InsufficientOverlap,
  DimensionMismatch,
  EmptyDataset,
  DivergedLoss,
  TooFewMatches,
  BackendFailure,
  PlacementFailure,
  EmptySet,
  MissingRadii,
  InvalidArgument,
  IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace uae
