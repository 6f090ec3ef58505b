#include "rerand/inference.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rerand/error.hpp"
#include "rerand/rng.hpp"

namespace rerand {

namespace {

void check_outcomes(const OutcomeData& outcomes) {
  require(outcomes.observed.size() == outcomes.assignment.size(), Errc::DimensionMismatch,
          "outcomes and assignment differ in length");
  require(outcomes.observed.allFinite(), Errc::DimensionMismatch, "outcomes contain non-finite values");
}

struct ArmStats {
  Index treated = 0;
  double sum_t = 0.0;
  double sum_c = 0.0;
};

ArmStats arm_stats(const Eigen::VectorXd& y, const Assignment& w) {
  ArmStats s;
  for (Index i = 0; i < y.size(); ++i) {
    if (w[i]) {
      ++s.treated;
      s.sum_t += y[i];
    } else {
      s.sum_c += y[i];
    }
  }
  return s;
}

}  // namespace

double diff_in_means(const Eigen::VectorXd& y, const Assignment& w) {
  require(y.size() == w.size(), Errc::DimensionMismatch, "outcomes and assignment differ in length");
  const auto s = arm_stats(y, w);
  const Index control = y.size() - s.treated;
  require(s.treated > 0 && control > 0, Errc::EmptyArm, "difference in means needs both arms nonempty");
  return s.sum_t / static_cast<double>(s.treated) - s.sum_c / static_cast<double>(control);
}

double diff_in_means(const OutcomeData& outcomes) {
  check_outcomes(outcomes);
  return diff_in_means(outcomes.observed, outcomes.assignment);
}

double two_sample_se(const OutcomeData& outcomes) {
  check_outcomes(outcomes);
  const auto& y = outcomes.observed;
  const auto& w = outcomes.assignment;
  const auto s = arm_stats(y, w);
  const Index nt = s.treated;
  const Index nc = y.size() - nt;
  require(nt > 0 && nc > 0, Errc::EmptyArm, "standard error needs both arms nonempty");
  const double mt = s.sum_t / static_cast<double>(nt);
  const double mc = s.sum_c / static_cast<double>(nc);
  double ss_t = 0.0, ss_c = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    if (w[i])
      ss_t += (y[i] - mt) * (y[i] - mt);
    else
      ss_c += (y[i] - mc) * (y[i] - mc);
  }
  const double var_t = nt > 1 ? ss_t / static_cast<double>(nt - 1) : 0.0;
  const double var_c = nc > 1 ? ss_c / static_cast<double>(nc - 1) : 0.0;
  return std::sqrt(var_t / static_cast<double>(nt) + var_c / static_cast<double>(nc));
}

RandomizationDistribution::RandomizationDistribution(const OutcomeData& outcomes,
                                                     std::span<const Assignment> draws) {
  check_outcomes(outcomes);
  require(!draws.empty(), Errc::ConfigInvalid, "randomization test needs at least one draw");
  observed_ = diff_in_means(outcomes);
  se_ = two_sample_se(outcomes);
  const auto& y = outcomes.observed;
  const auto& obs = outcomes.assignment;
  const Index n = y.size();
  const auto count = static_cast<Index>(draws.size());
  offset_.resize(count);
  slope_.resize(count);
  for (Index b = 0; b < count; ++b) {
    const auto& w = draws[static_cast<std::size_t>(b)];
    require(w.size() == n, Errc::DimensionMismatch,
            "draw " + std::to_string(b) + " has length " + std::to_string(w.size()) + ", expected " +
                std::to_string(n));
    offset_[b] = diff_in_means(y, w);
    Index nt = 0, moved_in = 0, moved_out = 0;
    for (Index i = 0; i < n; ++i) {
      nt += w[i];
      if (w[i] && !obs[i]) ++moved_in;
      if (!w[i] && obs[i]) ++moved_out;
    }
    slope_[b] = static_cast<double>(moved_in) / static_cast<double>(nt) +
                static_cast<double>(moved_out) / static_cast<double>(n - nt);
  }
}

double RandomizationDistribution::fraction(Index count, const PValueOptions& options) const {
  const auto b = static_cast<double>(draws());
  return options.plus_one ? (1.0 + static_cast<double>(count)) / (1.0 + b) : static_cast<double>(count) / b;
}

// Mirror-image draws tie with the observed statistic in exact arithmetic;
// count them as ties rather than let rounding decide.
double RandomizationDistribution::slack() const {
  return kTieTolerance * (std::abs(observed_) + se_);
}

double RandomizationDistribution::pvalue(double theta, const PValueOptions& options) const {
  const double shift = options.centered ? theta : 0.0;
  const double reference = std::abs(observed_ - shift) - slack();
  Index count = 0;
  for (Index b = 0; b < draws(); ++b)
    if (std::abs(tau(b, theta) - shift) >= reference) ++count;
  return fraction(count, options);
}

double RandomizationDistribution::pvalue_greater(double theta, const PValueOptions& options) const {
  const double reference = observed_ - slack();
  Index count = 0;
  for (Index b = 0; b < draws(); ++b)
    if (tau(b, theta) >= reference) ++count;
  return fraction(count, options);
}

double RandomizationDistribution::pvalue_less(double theta, const PValueOptions& options) const {
  const double reference = observed_ + slack();
  Index count = 0;
  for (Index b = 0; b < draws(); ++b)
    if (tau(b, theta) <= reference) ++count;
  return fraction(count, options);
}

double frt_pvalue(const OutcomeData& outcomes, std::span<const Assignment> draws, double theta,
                  const PValueOptions& options) {
  return RandomizationDistribution(outcomes, draws).pvalue(theta, options);
}

namespace {

/// Bisects [inside, outside] keeping reject(inside) true and reject(outside) false.
template <typename Reject>
double bisect_edge(Reject&& reject, double inside, double outside, double resolution) {
  for (int it = 0; it < 200 && std::abs(outside - inside) > resolution; ++it) {
    const double mid = 0.5 * (inside + outside);
    if (reject(mid))
      inside = mid;
    else
      outside = mid;
  }
  return inside;
}

[[noreturn]] void bracket_failed(const char* side, double lo, double hi) {
  fail(Errc::BracketFailed, std::string("the ") + side + " p-value does not cross alpha inside [" +
                                std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

}  // namespace

std::pair<double, double> ci_bounds(const RandomizationDistribution& dist, double alpha,
                                    const CiOptions& options) {
  require(alpha > 0.0 && alpha < 0.5, Errc::ConfigInvalid, "alpha must lie in (0, 0.5)");
  const double tau = dist.observed();
  const double scale = dist.se() > 0.0 ? dist.se() : std::max(1.0, std::abs(tau));
  const double lo = tau - options.bracket_width * scale;
  const double hi = tau + options.bracket_width * scale;
  const double resolution = options.resolution * scale;
  const auto& pv = options.pvalue;

  if (options.rule == CiRule::OneSided) {
    const auto reject_low = [&](double theta) { return dist.pvalue_greater(theta, pv) <= alpha; };
    const auto reject_high = [&](double theta) { return dist.pvalue_less(theta, pv) <= alpha; };
    if (!reject_low(lo) || reject_low(hi)) bracket_failed("right-tail", lo, hi);
    if (!reject_high(hi) || reject_high(lo)) bracket_failed("left-tail", lo, hi);
    return {bisect_edge(reject_low, lo, hi, resolution), bisect_edge(reject_high, hi, lo, resolution)};
  }

  // The absolute-value p-value need not be monotone in theta: scan a grid,
  // then refine the outermost accepted/rejected boundary on each side.
  const auto reject = [&](double theta) { return dist.pvalue(theta, pv) <= alpha; };
  const int points = std::max(options.grid_points, 3);
  std::vector<double> grid(static_cast<std::size_t>(points));
  std::vector<char> rejected(grid.size());
  for (int g = 0; g < points; ++g) {
    grid[static_cast<std::size_t>(g)] = lo + (hi - lo) * g / (points - 1);
    rejected[static_cast<std::size_t>(g)] = reject(grid[static_cast<std::size_t>(g)]);
  }
  std::optional<std::size_t> left, right;
  for (std::size_t g = 0; g < grid.size() && grid[g] <= tau; ++g)
    if (rejected[g]) left = g;
  for (std::size_t g = grid.size(); g-- > 0 && grid[g] >= tau;)
    if (rejected[g]) right = g;
  if (!left || *left + 1 >= grid.size()) bracket_failed("lower", lo, hi);
  if (!right || *right == 0) bracket_failed("upper", lo, hi);
  return {bisect_edge(reject, grid[*left], grid[*left + 1], resolution),
          bisect_edge(reject, grid[*right], grid[*right - 1], resolution)};
}

std::pair<double, double> ci_bounds(const OutcomeData& outcomes, std::span<const Assignment> draws, double alpha,
                                    const CiOptions& options) {
  return ci_bounds(RandomizationDistribution(outcomes, draws), alpha, options);
}

double randomness_metric(std::span<const Assignment> draws, double tolerance, int max_iterations) {
  const auto count = static_cast<Index>(draws.size());
  require(count >= 2, Errc::DegenerateSample, "L_n needs at least two draws");
  const Index n = draws.front().size();
  Eigen::MatrixXd signs(count, n);
  for (Index b = 0; b < count; ++b) {
    const auto& w = draws[static_cast<std::size_t>(b)];
    require(w.size() == n, Errc::DimensionMismatch, "draws differ in length");
    signs.row(b) = (2.0 * w.cast<double>().array() - 1.0).matrix().transpose();
  }
  signs.rowwise() -= signs.colwise().mean();
  const Eigen::MatrixXd cov = signs.transpose() * signs / static_cast<double>(count - 1);
  require(cov.diagonal().maxCoeff() > 0.0, Errc::DegenerateSample, "all draws are identical");

  Rng rng(0x5eed);
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal();
  v.normalize();
  double lambda = v.dot(cov * v);
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::VectorXd next = cov * v;
    const double norm = next.norm();
    if (norm == 0.0) break;
    v = next / norm;
    const double updated = v.dot(cov * v);
    const bool done = std::abs(updated - lambda) <= tolerance * std::abs(updated);
    lambda = updated;
    if (done) break;
  }
  return lambda;
}

InferenceReport analyze(const OutcomeData& outcomes, std::span<const Assignment> draws, double alpha,
                        double theta, const CiOptions& options) {
  const RandomizationDistribution dist(outcomes, draws);
  InferenceReport report;
  report.tau_hat = dist.observed();
  report.p_value = dist.pvalue(theta, options.pvalue);
  report.ci = ci_bounds(dist, alpha, options);
  report.alpha = alpha;
  report.draws_used = dist.draws();
  if (draws.size() >= 2) {
    try {
      report.l_n = randomness_metric(draws);
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateSample) throw;
    }
  }
  return report;
}

}  // namespace rerand
