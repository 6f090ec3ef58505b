#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rerand {

enum class Errc {
  RankDeficient = 1,
  DimensionMismatch,
  InfeasibleAssignment,
  InvalidSwap,
  StageMismatch,
  IterationBudgetExceeded,
  ConfigInvalid,
  EmptyArm,
  BracketFailed,
  DegenerateSample,
  ParseError,
  MixedType,
  EmptyFile,
  ConfigError,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the typed codes above;
/// the CLI maps them to distinct exit statuses.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }
  std::string_view name() const noexcept { return errc_name(code_); }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool ok, Errc code, const std::string& message) {
  if (!ok) fail(code, message);
}

}  // namespace rerand
