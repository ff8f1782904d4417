#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ldp {

enum class ErrorCode {
  InvalidArgument,
  NonZeroRowSum,
  NegativeOffDiagonal,
  Reducible,
  NonConvergence,
  NegativeInput,
  DegenerateDenominator,
  RejectionBudgetExceeded,
  AbsorbingState,
  ZeroRate,
  InsufficientHits,
  ConfigError,
  IoError,
};

std::string_view error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ldp
