#include "rerand/error.hpp"

namespace rerand {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InfeasibleAssignment: return "InfeasibleAssignment";
    case Errc::InvalidSwap: return "InvalidSwap";
    case Errc::StageMismatch: return "StageMismatch";
    case Errc::IterationBudgetExceeded: return "IterationBudgetExceeded";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::EmptyArm: return "EmptyArm";
    case Errc::BracketFailed: return "BracketFailed";
    case Errc::DegenerateSample: return "DegenerateSample";
    case Errc::ParseError: return "ParseError";
    case Errc::MixedType: return "MixedType";
    case Errc::EmptyFile: return "EmptyFile";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace rerand
