#ifndef LACUNA_ERROR_HPP
#define LACUNA_ERROR_HPP

#include <stdexcept>
#include <string>

namespace lacuna {

enum class ErrorCode {
  // config / usage
  ConfigError,
  // data format
  BadMagic,
  UnsupportedDatatype,
  TruncatedPayload,
  NonPositivePixdim,
  ObliqueAffine,
  GridMismatch,
  // preprocessing
  EmptyMask,
  NonPositiveIntensity,
  IllConditionedFit,
  DegenerateIntensities,
  ZeroMedian,
  // phantom
  PlacementFailure,
  // tensor / training
  ShapeMismatch,
  OddSpatialDim,
  DivergedLoss,
  PatchTooLarge,
  // eval
  EmptyClassRow,
  KTooLarge,
  LengthMismatch,
  ZeroVariance,
  // io
  IoError,
};

const char* error_code_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lacuna

#endif
