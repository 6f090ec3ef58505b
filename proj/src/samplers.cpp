#include "rerand/samplers.hpp"

#include <algorithm>
#include <cctype>

namespace rerand {

std::string_view method_name(Method method) {
  switch (method) {
    case Method::CR: return "CR";
    case Method::ARSRR: return "ARSRR";
    case Method::PSRR: return "PSRR";
    case Method::VNSRR: return "VNSRR";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "cr") return Method::CR;
  if (lower == "arsrr") return Method::ARSRR;
  if (lower == "psrr") return Method::PSRR;
  if (lower == "vnsrr") return Method::VNSRR;
  fail(Errc::ConfigError, "unknown method '" + std::string(name) + "' (expected cr, arsrr, psrr or vnsrr)");
}

template std::vector<AssignmentDraw> sample_batch<double>(const BalanceProblem<double>&, const ThresholdPlan&,
                                                          const SamplerConfig&, Index, unsigned);

}  // namespace rerand
