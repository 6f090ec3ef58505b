#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rerand/design.hpp"

namespace rerand {

struct OutcomeData {
  Eigen::VectorXd observed;
  Assignment assignment;
};

/// Mean outcome of treated units minus mean outcome of controls.
double diff_in_means(const Eigen::VectorXd& y, const Assignment& w);
double diff_in_means(const OutcomeData& outcomes);

/// Two-sample standard error sqrt(s_t^2/n_t + s_c^2/n_c).
double two_sample_se(const OutcomeData& outcomes);

struct PValueOptions {
  /// Compare |tau(W^b, theta) - theta| with |tau_obs - theta| instead of the
  /// uncentered absolute values.
  bool centered = false;
  /// (1 + count) / (1 + B) instead of count / B.
  bool plus_one = false;
};

/// Randomization distribution of the difference in means under the sharp
/// hypotheses Y_i(1) - Y_i(0) = theta, for one fixed set of draws.
///
/// Imputing Y(1) = Y + theta (1 - W_obs) and Y(0) = Y - theta W_obs gives
/// tau(W^b, theta) = A_b + theta C_b with C_b >= 0, so each p-value costs O(B)
/// after an O(nB) setup.
class RandomizationDistribution {
 public:
  RandomizationDistribution(const OutcomeData& outcomes, std::span<const Assignment> draws);

  Index draws() const { return static_cast<Index>(offset_.size()); }
  double observed() const { return observed_; }
  double se() const { return se_; }
  double tau(Index b, double theta) const { return offset_[b] + theta * slope_[b]; }

  /// Share of draws with |tau^b(theta)| >= |tau_obs|.
  double pvalue(double theta, const PValueOptions& options = {}) const;
  /// Share of draws with tau^b(theta) >= tau_obs; nondecreasing in theta.
  double pvalue_greater(double theta, const PValueOptions& options = {}) const;
  /// Share of draws with tau^b(theta) <= tau_obs; nonincreasing in theta.
  double pvalue_less(double theta, const PValueOptions& options = {}) const;

 private:
  static constexpr double kTieTolerance = 1e-10;

  double fraction(Index count, const PValueOptions& options) const;
  double slack() const;

  Eigen::VectorXd offset_;
  Eigen::VectorXd slope_;
  double observed_ = 0.0;
  double se_ = 0.0;
};

double frt_pvalue(const OutcomeData& outcomes, std::span<const Assignment> draws, double theta,
                  const PValueOptions& options = {});

enum class CiRule {
  /// theta_l from the right-tail p-value, theta_u from the left-tail one.
  OneSided,
  /// Both ends from the absolute-value p-value (see PValueOptions::centered).
  Absolute,
};

struct CiOptions {
  CiRule rule = CiRule::OneSided;
  PValueOptions pvalue;
  /// Search bracket tau_obs +- width * se.
  double bracket_width = 10.0;
  /// Bisection stops at resolution * se.
  double resolution = 1e-3;
  int grid_points = 200;
};

/// Interval by inverting the randomization test at level alpha per side
/// (nominal coverage 1 - 2 alpha). Every theta is evaluated on the same draws.
std::pair<double, double> ci_bounds(const OutcomeData& outcomes, std::span<const Assignment> draws, double alpha,
                                    const CiOptions& options = {});
std::pair<double, double> ci_bounds(const RandomizationDistribution& dist, double alpha,
                                    const CiOptions& options = {});

/// Largest eigenvalue of the sample covariance (divisor B - 1) of 2W - 1
/// across draws, by power iteration.
double randomness_metric(std::span<const Assignment> draws, double tolerance = 1e-8, int max_iterations = 100000);

struct InferenceReport {
  double tau_hat = 0.0;
  double p_value = 1.0;
  std::pair<double, double> ci{0.0, 0.0};
  double alpha = 0.05;
  Index draws_used = 0;
  std::optional<double> l_n;
};

/// tau_hat, the p-value at theta, the 1 - 2 alpha interval and L_n (when at
/// least two distinct draws are given).
InferenceReport analyze(const OutcomeData& outcomes, std::span<const Assignment> draws, double alpha,
                        double theta = 0.0, const CiOptions& options = {});

}  // namespace rerand
