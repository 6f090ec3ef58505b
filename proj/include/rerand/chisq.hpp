#pragma once

#include <span>
#include <variant>
#include <vector>

#include "rerand/design.hpp"

namespace rerand {

/// Regularized lower incomplete gamma P(a, x): power series below x = a + 1,
/// Lentz continued fraction for the upper tail above it.
double regularized_gamma_p(double a, double x);
double regularized_gamma_q(double a, double x);

double chisq_cdf(int df, double x);
double chisq_pdf(int df, double x);
/// Inverse of chisq_cdf: bracketing bisection followed by a Newton polish.
double chisq_quantile(int df, double prob);

/// Poisson(lambda/2) mixture of central chi-square CDFs, truncated once the
/// remaining Poisson mass is below 1e-12.
double noncentral_chisq_cdf(int df, double noncentrality, double x);
double noncentral_chisq_quantile(int df, double noncentrality, double prob);

struct AcceptanceProbability {
  double value;
};
struct ExplicitThreshold {
  double value;
};

/// Threshold a on M, either given directly or as a = chi2_df quantile at p_a.
struct ThresholdSpec {
  std::variant<AcceptanceProbability, ExplicitThreshold> mode;
  int df = 1;

  double threshold() const;
};

/// Stage-wise schedule a_k = (n_k / n_[k]) q_k, q_k the 1/s_k quantile of a
/// noncentral chi-square with df and noncentrality (n_[k-1]/n_k) M_[k-1].
struct SequentialThresholdSpec {
  std::vector<double> stage_shares;
  int df = 1;
  std::vector<Index> stage_sizes;
};

/// Threshold of stage k (0-based) given the realized M of the previous prefix
/// (ignored for k = 0).
double sequential_stage_threshold(const SequentialThresholdSpec& spec, Index stage, double previous_m);

/// All K thresholds; realized_m_prev[k] is M_[k-1] (entry 0 is ignored).
std::vector<double> sequential_thresholds(const SequentialThresholdSpec& spec,
                                          std::span<const double> realized_m_prev);

}  // namespace rerand
