#include "gmed/error.hpp"

namespace gmed {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingMediator: return "MissingMediator";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::MalformedInput: return "MalformedInput";
    case ErrorCode::SingularPooledCovariance: return "SingularPooledCovariance";
    case ErrorCode::InfeasibleStart: return "InfeasibleStart";
    case ErrorCode::InfeasibleState: return "InfeasibleState";
    case ErrorCode::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorCode::NoFeasibleCandidate: return "NoFeasibleCandidate";
    case ErrorCode::AllStartsInfeasible: return "AllStartsInfeasible";
    case ErrorCode::InfeasibleLogTerm: return "InfeasibleLogTerm";
    case ErrorCode::SingularProjectedCovariance: return "SingularProjectedCovariance";
    case ErrorCode::TooFewDraws: return "TooFewDraws";
    case ErrorCode::DegenerateResample: return "DegenerateResample";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingMediator:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::MalformedInput:
      return ErrorCategory::Input;
    case ErrorCode::InvalidArgument:
      return ErrorCategory::Usage;
    default:
      return ErrorCategory::Numerical;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace gmed
