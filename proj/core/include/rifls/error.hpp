#pragma once

#include <stdexcept>
#include <string>

namespace rifls {

enum class ErrorCode {
  AngleNearPi,
  EmptySampleWindow,
  NonMonotoneStamps,
  SingularCovariance,
  BehindCamera,
  LowDisparity,
  NonMonotoneStamp,
  MissingImuCoverage,
  IndefiniteNormalEquations,
  DivergedStep,
  NothingToMarginalize,
  NoSuccessfulTrials,
  CurveTooShort,
  InvalidConfig,
  IoError,
  SessionDiverged,
};

const char* to_string(ErrorCode code);

// Every recoverable failure in the library is reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rifls
