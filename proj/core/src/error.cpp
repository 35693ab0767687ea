#include "rifls/error.hpp"

namespace rifls {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AngleNearPi: return "AngleNearPi";
    case ErrorCode::EmptySampleWindow: return "EmptySampleWindow";
    case ErrorCode::NonMonotoneStamps: return "NonMonotoneStamps";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::LowDisparity: return "LowDisparity";
    case ErrorCode::NonMonotoneStamp: return "NonMonotoneStamp";
    case ErrorCode::MissingImuCoverage: return "MissingImuCoverage";
    case ErrorCode::IndefiniteNormalEquations: return "IndefiniteNormalEquations";
    case ErrorCode::DivergedStep: return "DivergedStep";
    case ErrorCode::NothingToMarginalize: return "NothingToMarginalize";
    case ErrorCode::NoSuccessfulTrials: return "NoSuccessfulTrials";
    case ErrorCode::CurveTooShort: return "CurveTooShort";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SessionDiverged: return "SessionDiverged";
  }
  return "Unknown";
}

}  // namespace rifls
