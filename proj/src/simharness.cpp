#include "rerand/simharness.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/QR>

#include "rerand/balance.hpp"
#include "rerand/chisq.hpp"
#include "rerand/inference.hpp"

namespace rerand {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::VectorXd realized(const SyntheticData& data, const Assignment& w) {
  Eigen::VectorXd y(w.size());
  for (Index i = 0; i < w.size(); ++i) y[i] = w[i] ? data.y1[i] : data.y0[i];
  return y;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? kNaN : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v) {
  if (v.size() < 2) return kNaN;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

std::vector<Assignment> assignments_of(std::vector<AssignmentDraw>& draws, std::size_t from) {
  std::vector<Assignment> out;
  out.reserve(draws.size() - from);
  for (std::size_t b = from; b < draws.size(); ++b) out.push_back(std::move(draws[b].assignment));
  return out;
}

[[noreturn]] void rethrow_with(const Error& e, const std::string& context) {
  throw Error(e.code(), context + ": " + e.what());
}

}  // namespace

SyntheticData gen_synthetic(Index n, Index p, double effect, Rng& rng) {
  require(n >= 1 && p >= 1, Errc::ConfigInvalid, "synthetic data needs n, p >= 1");
  SyntheticData data;
  data.covariates.resize(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) data.covariates(i, j) = rng.normal();
  const double noise_sd = std::sqrt(static_cast<double>(p));
  data.y0.resize(n);
  for (Index i = 0; i < n; ++i) data.y0[i] = data.covariates.row(i).sum() + noise_sd * rng.normal();
  data.tau = effect * std::sqrt(2.0 * static_cast<double>(p));
  data.y1 = data.y0.array() + data.tau;
  return data;
}

ThresholdPlan scenario_thresholds(const SimScenario& scenario) {
  if (scenario.thresholds) return *scenario.thresholds;
  return chisq_quantile(static_cast<int>(scenario.p), scenario.acceptance_probability);
}

std::vector<BenchRow> run_benchmark(const SimScenario& scenario) {
  require(scenario.replications >= 1, Errc::ConfigInvalid, "need at least one replication");
  require(scenario.draws >= 0, Errc::ConfigInvalid, "draw count must be nonnegative");
  require(!scenario.samplers.empty(), Errc::ConfigInvalid, "no samplers configured");
  const ThresholdPlan plan = scenario_thresholds(scenario);
  const std::size_t methods = scenario.samplers.size();
  const bool infer = scenario.draws >= 1;

  struct Tally {
    std::vector<double> tau_hat;
    double size = 0, power = 0, coverage = 0, length = 0, seconds = 0, iterations = 0;
    Index draws = 0;
    double l_n = kNaN;
  };
  std::vector<Tally> tallies(methods);
  double tau = 0.0;

  for (Index r = 0; r < scenario.replications; ++r) {
    const std::uint64_t rep_seed = stream_seed(scenario.seed, static_cast<std::uint64_t>(r));
    Rng data_rng(stream_seed(rep_seed, 0));
    const SyntheticData data = gen_synthetic(scenario.n, scenario.p, scenario.effect, data_rng);
    tau = data.tau;
    const auto problem = build_problem<double>(data.covariates, scenario.design);

    for (std::size_t m = 0; m < methods; ++m) {
      const auto& sampler = scenario.samplers[m];
      const std::string context = sampler.name + ", replication " + std::to_string(r);
      auto& tally = tallies[m];
      try {
        SamplerConfig config = sampler.config;
        config.seed = stream_seed(rep_seed, m + 1);
        const auto start = std::chrono::steady_clock::now();
        auto batch = sample_batch(problem, plan, config, 1 + scenario.draws, scenario.threads);
        const std::chrono::duration<double> spent = std::chrono::steady_clock::now() - start;
        tally.seconds += spent.count() * 1000.0 / static_cast<double>(batch.size());
        for (const auto& d : batch) tally.iterations += static_cast<double>(d.iterations);
        tally.draws += static_cast<Index>(batch.size());

        const Assignment observed = batch.front().assignment;
        const OutcomeData shifted{realized(data, observed), observed};
        tally.tau_hat.push_back(diff_in_means(shifted));
        if (!infer) continue;

        const auto draws = assignments_of(batch, 1);
        const OutcomeData null_outcomes{data.y0, observed};
        if (RandomizationDistribution(null_outcomes, draws).pvalue(0.0) <= scenario.alpha) tally.size += 1;
        const RandomizationDistribution dist(shifted, draws);
        if (dist.pvalue(0.0) <= scenario.alpha) tally.power += 1;
        const auto [lo, hi] = ci_bounds(dist, scenario.ci_alpha);
        if (lo <= tau && tau <= hi) tally.coverage += 1;
        tally.length += hi - lo;
        if (r == 0 && draws.size() >= 2) {
          try {
            tally.l_n = randomness_metric(draws);
          } catch (const Error& e) {
            if (e.code() != Errc::DegenerateSample) throw;
          }
        }
      } catch (const Error& e) {
        rethrow_with(e, context);
      }
    }
  }

  std::vector<BenchRow> rows;
  const auto reps = static_cast<double>(scenario.replications);
  for (std::size_t m = 0; m < methods; ++m) {
    const auto& tally = tallies[m];
    BenchRow row;
    row.method = scenario.samplers[m].name;
    row.bias = std::abs(mean_of(tally.tau_hat) - tau);
    row.sd = scenario.replications >= 2 ? std::sqrt(variance_of(tally.tau_hat)) : 0.0;
    row.size = infer ? tally.size / reps : kNaN;
    row.power = infer ? tally.power / reps : kNaN;
    row.coverage = infer ? tally.coverage / reps : kNaN;
    row.length = infer ? tally.length / reps : kNaN;
    row.run_time_seconds = tally.seconds / reps;
    row.l_n = tally.l_n;
    row.mean_iterations = tally.iterations / static_cast<double>(tally.draws);
    rows.push_back(row);
  }
  return rows;
}

std::vector<TheoremCheck> verify_theorems(const SimScenario& scenario) {
  require(scenario.replications >= 2, Errc::ConfigInvalid, "need at least two replications");
  const ThresholdPlan plan = scenario_thresholds(scenario);
  Rng data_rng(stream_seed(scenario.seed, 0));
  const SyntheticData data = gen_synthetic(scenario.n, scenario.p, scenario.effect, data_rng);
  const auto problem = build_problem<double>(data.covariates, scenario.design);
  const auto reps = static_cast<double>(scenario.replications);

  const auto tau_hats = [&](const SamplerConfig& base, std::uint64_t stream) {
    SamplerConfig config = base;
    config.seed = stream_seed(scenario.seed, stream);
    const auto batch = sample_batch(problem, plan, config, scenario.replications, scenario.threads);
    std::vector<double> out;
    out.reserve(batch.size());
    for (const auto& d : batch) out.push_back(diff_in_means(realized(data, d.assignment), d.assignment));
    return out;
  };

  SamplerConfig cr;
  cr.method = Method::CR;
  const double v_cr = variance_of(tau_hats(cr, scenario.samplers.size() + 1));

  // Least squares of Y(0) on (1, X); the explained part drives the bound.
  const Index n = scenario.n;
  Eigen::MatrixXd design(n, scenario.p + 1);
  design.col(0).setOnes();
  design.rightCols(scenario.p) = data.covariates;
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(data.y0);
  const Eigen::VectorXd beta = coef.tail(scenario.p);
  const Eigen::MatrixXd centered = data.covariates.rowwise() - data.covariates.colwise().mean();
  const Eigen::MatrixXd s_xx = centered.transpose() * centered / static_cast<double>(n - 1);
  const double nt = static_cast<double>(problem.treated());
  const double nc = static_cast<double>(problem.control());
  const double explained = static_cast<double>(n) * beta.dot(s_xx * beta) / (nt * nc);

  double a = kNaN;
  if (const auto* value = std::get_if<double>(&plan)) a = *value;
  const double shrink = 1.0 - a / static_cast<double>(scenario.p);

  std::vector<TheoremCheck> checks;
  for (std::size_t m = 0; m < scenario.samplers.size(); ++m) {
    const auto& sampler = scenario.samplers[m];
    std::vector<double> values;
    try {
      values = tau_hats(sampler.config, m + 1);
    } catch (const Error& e) {
      rethrow_with(e, sampler.name);
    }
    TheoremCheck check;
    check.method = sampler.name;
    check.mean_tau = mean_of(values);
    check.bias = check.mean_tau - data.tau;
    check.variance = variance_of(values);
    check.bias_se = std::sqrt(check.variance / reps);
    check.unbiased = std::abs(check.bias) <= 3.0 * check.bias_se;
    check.v_cr = v_cr;
    check.r_squared = explained / v_cr;
    check.realized_reduction = 1.0 - check.variance / v_cr;
    check.bound = shrink * check.r_squared;
    const double kept = check.variance + shrink * explained;
    check.sigma_mc = std::sqrt(2.0 * check.variance * check.variance / (reps - 1) +
                               2.0 * kept * kept / (reps - 1)) /
                     v_cr;
    check.bound_holds = check.realized_reduction >= check.bound - 3.0 * check.sigma_mc;
    checks.push_back(check);
  }
  return checks;
}

}  // namespace rerand
