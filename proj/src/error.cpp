#include "lacuna/error.hpp"

namespace lacuna {

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonPositivePixdim: return "NonPositivePixdim";
    case ErrorCode::ObliqueAffine: return "ObliqueAffine";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::NonPositiveIntensity: return "NonPositiveIntensity";
    case ErrorCode::IllConditionedFit: return "IllConditionedFit";
    case ErrorCode::DegenerateIntensities: return "DegenerateIntensities";
    case ErrorCode::ZeroMedian: return "ZeroMedian";
    case ErrorCode::PlacementFailure: return "PlacementFailure";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OddSpatialDim: return "OddSpatialDim";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::PatchTooLarge: return "PatchTooLarge";
    case ErrorCode::EmptyClassRow: return "EmptyClassRow";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

}  // namespace lacuna
