#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rerand/design.hpp"
#include "rerand/inference.hpp"
#include "rerand/samplers.hpp"
#include "rerand/simharness.hpp"

namespace rerand {

/// Covariates read from CSV. Columns named `stratum` or `cluster` hold labels
/// rather than covariates; label ids follow first appearance.
struct CovariateTable {
  Eigen::MatrixXd values;
  std::vector<std::string> names;
  enum class Grouping { None, Stratum, Cluster } grouping = Grouping::None;
  std::vector<Index> labels;
  std::vector<std::string> label_names;

  std::vector<std::vector<Index>> groups() const { return groups_from_labels(labels); }
};

CovariateTable parse_covariates(std::istream& in);
CovariateTable parse_covariates(const std::string& path);

/// `unit,assignment`, units numbered from 1.
void write_assignment(std::ostream& out, const Assignment& w);
Assignment read_assignment(std::istream& in);

/// One column per draw and a final row with the M values.
void write_draws(std::ostream& out, std::span<const AssignmentDraw> draws);

/// CSV with columns `y` (outcome) and `w` (observed assignment).
OutcomeData parse_outcomes(std::istream& in);
OutcomeData parse_outcomes(const std::string& path);

std::string report_json(const InferenceReport& report);

/// Bias, SD, Size, Power, Coverage and Length scaled by 1000.
void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows);

/// Scenario file for `bench`; see README for the schema.
SimScenario parse_scenario(std::istream& in);
SimScenario parse_scenario(const std::string& path);

/// Comma-separated list of numbers, e.g. "100,100".
std::vector<double> parse_number_list(const std::string& text, const std::string& what);

/// %.17g, with nan/inf spelled as such.
std::string format_number(double value);

}  // namespace rerand
