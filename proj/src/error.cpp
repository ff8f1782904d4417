#include "ldp/error.hpp"

namespace ldp {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonZeroRowSum: return "NonZeroRowSum";
    case ErrorCode::NegativeOffDiagonal: return "NegativeOffDiagonal";
    case ErrorCode::Reducible: return "Reducible";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::NegativeInput: return "NegativeInput";
    case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
    case ErrorCode::RejectionBudgetExceeded: return "RejectionBudgetExceeded";
    case ErrorCode::AbsorbingState: return "AbsorbingState";
    case ErrorCode::ZeroRate: return "ZeroRate";
    case ErrorCode::InsufficientHits: return "InsufficientHits";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace ldp
