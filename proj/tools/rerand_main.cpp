// rerand: draw balanced assignments, analyze outcomes, run benchmarks.

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rerand/balance.hpp"
#include "rerand/chisq.hpp"
#include "rerand/inference.hpp"
#include "rerand/io.hpp"
#include "rerand/samplers.hpp"
#include "rerand/simharness.hpp"

using namespace rerand;

namespace {

struct Options {
  std::string covariates;
  std::string out;
  std::string method = "vnsrr";
  std::optional<double> pa;
  std::optional<double> threshold;
  std::optional<Index> nt;
  std::optional<Index> kt;
  std::optional<std::uint64_t> seed;
  std::optional<Index> local_pairs;
  std::optional<Index> shake_pairs;
  double gamma = 20.0;
  std::int64_t max_iter = 10'000'000;
  std::string stage_sizes;
  std::string stage_shares;
  std::string stage_thresholds;
  double ridge = 0.0;
  unsigned threads = 1;
  Index count = 1;
  // infer
  std::string outcomes;
  Index draws = 1000;
  double alpha = 0.05;
  double theta = 0.0;
  bool centered = false;
  bool plus_one = false;
  bool absolute_ci = false;
  // bench
  std::string scenario;
};

std::vector<Index> to_indices(const std::vector<double>& values, const std::string& what) {
  std::vector<Index> out;
  for (double v : values) {
    require(v >= 0 && v == std::floor(v), Errc::ConfigError, what + " must be nonnegative integers");
    out.push_back(static_cast<Index>(v));
  }
  return out;
}

struct Setup {
  CovariateTable table;
  Design design;
  ThresholdPlan plan;
  SamplerConfig config;
};

Setup prepare(const Options& o) {
  require(!o.covariates.empty(), Errc::ConfigError, "no covariate file given");
  require(!(o.pa && o.threshold), Errc::ConfigError, "--pa and --threshold are mutually exclusive");
  require(o.stage_shares.empty() || o.stage_thresholds.empty(), Errc::ConfigError,
          "--stage-shares and --stage-thresholds are mutually exclusive");
  Setup s;
  s.table = parse_covariates(o.covariates);
  const Index n = s.table.values.rows();
  const Index p = s.table.values.cols();
  const Index nt = o.nt.value_or(n / 2);
  require(nt >= 1 && nt < n, Errc::ConfigError, "--nt must lie in [1, n)");

  const bool sequential = !o.stage_sizes.empty();
  require(!(sequential && s.table.grouping != CovariateTable::Grouping::None), Errc::ConfigError,
          "--stage-sizes cannot be combined with stratum or cluster columns");
  require(sequential || (o.stage_shares.empty() && o.stage_thresholds.empty()), Errc::ConfigError,
          "stage thresholds need --stage-sizes");
  if (sequential) {
    SequentialDesign seq;
    seq.stage_sizes = to_indices(parse_number_list(o.stage_sizes, "--stage-sizes"), "--stage-sizes");
    for (Index size : seq.stage_sizes) seq.stage_treated.push_back(size / 2);
    s.design = seq;
  } else if (s.table.grouping == CovariateTable::Grouping::Stratum) {
    StratifiedDesign strat;
    strat.strata = s.table.groups();
    for (const auto& members : strat.strata)
      strat.stratum_treated.push_back(static_cast<Index>(
          std::lround(static_cast<double>(members.size()) * static_cast<double>(nt) / static_cast<double>(n))));
    s.design = strat;
  } else if (s.table.grouping == CovariateTable::Grouping::Cluster) {
    ClusterDesign clust;
    clust.clusters = s.table.groups();
    clust.clusters_treated = o.kt.value_or(static_cast<Index>(clust.clusters.size()) / 2);
    s.design = clust;
  } else {
    s.design = SimpleDesign{nt};
  }

  if (!o.stage_shares.empty()) {
    s.plan = StageShares{parse_number_list(o.stage_shares, "--stage-shares")};
  } else if (!o.stage_thresholds.empty()) {
    s.plan = StageThresholds{parse_number_list(o.stage_thresholds, "--stage-thresholds")};
  } else if (o.threshold) {
    s.plan = *o.threshold;
  } else {
    s.plan = chisq_quantile(static_cast<int>(p), o.pa.value_or(1e-3));
  }

  s.config.method = parse_method(o.method);
  s.config.local_pairs = o.local_pairs;
  s.config.shake_pairs = o.shake_pairs;
  s.config.psrr_gamma = o.gamma;
  s.config.max_iterations = o.max_iter;
  if (o.seed) {
    s.config.seed = *o.seed;
  } else {
    std::random_device device;
    s.config.seed = (static_cast<std::uint64_t>(device()) << 32) | device();
    std::cerr << "seed: " << s.config.seed << '\n';
  }
  return s;
}

template <typename Write>
void emit(const std::string& path, Write&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    return;
  }
  std::ofstream file(path);
  require(file.good(), Errc::IoError, "cannot write '" + path + "'");
  write(file);
  require(file.good(), Errc::IoError, "write to '" + path + "' failed");
}

std::vector<AssignmentDraw> draw(const Setup& s, const BuildOptions& build, Index count, unsigned threads,
                                 BalanceProblem<double>& problem) {
  problem = build_problem<double>(s.table.values, s.design, build);
  return sample_batch(problem, s.plan, s.config, count, threads);
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("covariates,--covariates", o.covariates, "Covariate CSV");
  cmd->add_option("--out,-o", o.out, "Output path (default stdout)");
  cmd->add_option("--method", o.method, "cr, arsrr, psrr or vnsrr")->capture_default_str();
  cmd->add_option("--pa", o.pa, "Acceptance probability (default 1e-3)");
  cmd->add_option("--threshold", o.threshold, "Threshold a on M");
  cmd->add_option("--nt", o.nt, "Treated units (default n/2)");
  cmd->add_option("--kt", o.kt, "Treated clusters (default K/2)");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--L", o.local_pairs, "Local-search pairs per pass");
  cmd->add_option("--S", o.shake_pairs, "Forced swaps per shake");
  cmd->add_option("--gamma", o.gamma, "PSRR exponent")->capture_default_str();
  cmd->add_option("--max-iter", o.max_iter, "Candidate evaluations allowed per draw")->capture_default_str();
  cmd->add_option("--stage-sizes", o.stage_sizes, "Sequential stage sizes, e.g. 50,50");
  cmd->add_option("--stage-shares", o.stage_shares, "Per-stage s_k");
  cmd->add_option("--stage-thresholds", o.stage_thresholds, "Per-stage thresholds");
  cmd->add_option("--ridge", o.ridge, "Ridge added to the covariance diagonal");
  cmd->add_option("--threads", o.threads, "Worker threads")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced treatment assignment by rerandomization"};
  app.require_subcommand(1);
  Options o;

  auto* assign = app.add_subcommand("assign", "Draw one acceptable assignment");
  add_common(assign, o);
  auto* sample = app.add_subcommand("sample", "Draw several acceptable assignments");
  add_common(sample, o);
  sample->add_option("--count", o.count, "Number of draws")->capture_default_str();
  auto* infer = app.add_subcommand("infer", "Randomization test and interval for observed outcomes");
  add_common(infer, o);
  infer->add_option("--outcomes", o.outcomes, "CSV with columns y and w")->required();
  infer->add_option("--draws", o.draws, "Randomization draws B")->capture_default_str();
  infer->add_option("--alpha", o.alpha, "Level per side of the interval")->capture_default_str();
  infer->add_option("--theta", o.theta, "Hypothesized constant effect for the p-value")->capture_default_str();
  infer->add_flag("--centered", o.centered, "Center the test statistic at theta");
  infer->add_flag("--plus-one", o.plus_one, "Use (1 + count) / (1 + B)");
  infer->add_flag("--absolute-ci", o.absolute_ci, "Invert the two-sided p-value instead of the one-sided ones");
  auto* bench = app.add_subcommand("bench", "Run a simulation scenario");
  bench->add_option("scenario", o.scenario, "Scenario JSON")->required();
  bench->add_option("--out,-o", o.out, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ConfigError: " << e.what() << '\n';
    return 10 + static_cast<int>(Errc::ConfigError);
  }

  try {
    BuildOptions build;
    build.ridge = o.ridge;
    BalanceProblem<double> problem;
    if (*assign) {
      const auto s = prepare(o);
      const auto draws = draw(s, build, 1, 1, problem);
      emit(o.out, [&](std::ostream& out) { write_assignment(out, draws.front().assignment); });
      std::cerr << "M: " << format_number(draws.front().m_value) << '\n';
    } else if (*sample) {
      const auto s = prepare(o);
      const auto draws = draw(s, build, o.count, o.threads, problem);
      emit(o.out, [&](std::ostream& out) { write_draws(out, draws); });
    } else if (*infer) {
      const auto s = prepare(o);
      const OutcomeData outcomes = parse_outcomes(o.outcomes);
      require(outcomes.observed.size() == s.table.values.rows(), Errc::DimensionMismatch,
              "outcome file and covariate file differ in row count");
      auto batch = draw(s, build, o.draws, o.threads, problem);
      std::vector<Assignment> draws;
      for (auto& d : batch) draws.push_back(std::move(d.assignment));
      CiOptions ci;
      ci.rule = o.absolute_ci ? CiRule::Absolute : CiRule::OneSided;
      ci.pvalue.centered = o.centered;
      ci.pvalue.plus_one = o.plus_one;
      const auto report = analyze(outcomes, draws, o.alpha, o.theta, ci);
      emit(o.out, [&](std::ostream& out) { out << report_json(report) << '\n'; });
    } else if (*bench) {
      const auto scenario = parse_scenario(o.scenario);
      const auto rows = run_benchmark(scenario);
      emit(o.out, [&](std::ostream& out) { write_bench_csv(out, rows); });
    }
  } catch (const Error& e) {
    std::cerr << e.name() << ": " << e.what() << '\n';
    return 10 + static_cast<int>(e.code());
  }
  return 0;
}
