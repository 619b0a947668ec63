#include "uae/error.hpp"

namespace uae {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MismatchedLengths: return "MismatchedLengths";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::DimensionOverflow: return "DimensionOverflow";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::GeometryMismatch: return "GeometryMismatch";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyBox: return "EmptyBox";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::NonUnitInput: return "NonUnitInput";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::SingleEmptyBatch: return "SingleEmptyBatch";
    case ErrorCode::ConstantVolume: return "ConstantVolume";
    case ErrorCode::VolumeTooSmall: return "VolumeTooSmall";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::TooFewMatches: return "TooFewMatches";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::PlacementFailure: return "PlacementFailure";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::MissingRadii: return "MissingRadii";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace uae
