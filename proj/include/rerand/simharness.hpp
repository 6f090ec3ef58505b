#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rerand/design.hpp"
#include "rerand/rng.hpp"
#include "rerand/samplers.hpp"

namespace rerand {

struct SyntheticData {
  Eigen::MatrixXd covariates;
  Eigen::VectorXd y0;
  Eigen::VectorXd y1;
  /// Additive effect c * sqrt(2p).
  double tau = 0.0;
};

/// X iid N(0, 1); Y(0) = sum_j X_j + eps with eps ~ N(0, p); Y(1) = Y(0) + tau.
SyntheticData gen_synthetic(Index n, Index p, double effect, Rng& rng);

struct NamedSampler {
  std::string name;
  SamplerConfig config;
};

struct SimScenario {
  Index n = 30;
  Index p = 2;
  Design design = SimpleDesign{15};
  /// Effect multiplier c; tau = c sqrt(Var Y(0)).
  double effect = 0.15;
  /// Used unless `thresholds` is set: a = chi2_p quantile at p_a.
  double acceptance_probability = 1e-3;
  std::optional<ThresholdPlan> thresholds;
  std::vector<NamedSampler> samplers;
  Index replications = 200;
  /// Analysis draws per replication; 0 skips inference.
  Index draws = 500;
  /// FRT level; the interval uses ci_alpha per side.
  double alpha = 0.1;
  double ci_alpha = 0.05;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

/// Threshold plan of a scenario: explicit when given, else the p_a quantile.
ThresholdPlan scenario_thresholds(const SimScenario& scenario);

struct BenchRow {
  std::string method;
  double bias = 0.0;
  double sd = 0.0;
  double size = 0.0;
  double power = 0.0;
  double coverage = 0.0;
  double length = 0.0;
  /// Seconds per 1000 draws, averaged over replications.
  double run_time_seconds = 0.0;
  double l_n = 0.0;
  double mean_iterations = 0.0;
};

/// Fresh data every replication (shared by all samplers), one design draw plus
/// `draws` analysis draws per sampler. Size uses the null outcomes, power,
/// bias, SD, coverage and length the shifted ones, all on the same draws.
std::vector<BenchRow> run_benchmark(const SimScenario& scenario);

struct TheoremCheck {
  std::string method;
  double mean_tau = 0.0;
  double bias = 0.0;
  double bias_se = 0.0;
  double variance = 0.0;
  double v_cr = 0.0;
  double r_squared = 0.0;
  double realized_reduction = 0.0;
  double bound = 0.0;
  double sigma_mc = 0.0;
  bool unbiased = false;
  bool bound_holds = false;
};

/// One dataset from the scenario seed; `replications` design draws per sampler
/// and as many complete randomizations for V_CR.
std::vector<TheoremCheck> verify_theorems(const SimScenario& scenario);

}  // namespace rerand
