#pragma once

#include <stdexcept>
#include <string>

namespace gmed {

enum class ErrorCode {
  // ingestion
  MissingMediator,
  DimensionMismatch,
  NonFiniteValue,
  MalformedInput,
  // numerical
  SingularPooledCovariance,
  InfeasibleStart,
  InfeasibleState,
  RankDeficientDesign,
  NoFeasibleCandidate,
  AllStartsInfeasible,
  InfeasibleLogTerm,
  SingularProjectedCovariance,
  TooFewDraws,
  DegenerateResample,
  // configuration
  InvalidArgument,
};

// Coarse grouping used by the CLI to pick an exit code.
enum class ErrorCategory { Usage, Input, Numerical };

const char* to_string(ErrorCode code) noexcept;
ErrorCategory category_of(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace gmed
