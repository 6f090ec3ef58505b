#include "rerand/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "rerand/error.hpp"

namespace rerand {

namespace {

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r");
  s = s.substr(begin, end - begin + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::optional<double> to_number(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  const char* first = cell.data();
  if (*first == '+') ++first;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;
};

Csv read_csv(std::istream& in) {
  Csv csv;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (csv.header.empty()) {
      csv.header = std::move(cells);
      continue;
    }
    if (cells.size() != csv.header.size())
      fail(Errc::ParseError, "line " + std::to_string(number) + ": expected " + std::to_string(csv.header.size()) +
                                 " fields, found " + std::to_string(cells.size()));
    csv.rows.push_back(std::move(cells));
    csv.lines.push_back(number);
  }
  require(!csv.header.empty(), Errc::EmptyFile, "input is empty");
  require(!csv.rows.empty(), Errc::EmptyFile, "input has a header but no data rows");
  return csv;
}

std::ifstream open(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::IoError, "cannot open '" + path + "'");
  return in;
}

[[noreturn]] void bad_cell(const Csv& csv, std::size_t row, std::size_t col) {
  fail(Errc::ParseError, "line " + std::to_string(csv.lines[row]) + ", column " + std::to_string(col + 1) + " ('" +
                             csv.header[col] + "'): '" + csv.rows[row][col] + "' is not a finite number");
}

std::optional<std::size_t> find_column(const Csv& csv, const std::string& name) {
  for (std::size_t c = 0; c < csv.header.size(); ++c)
    if (lower(csv.header[c]) == name) return c;
  return std::nullopt;
}

}  // namespace

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  return buffer;
}

CovariateTable parse_covariates(std::istream& in) {
  const Csv csv = read_csv(in);
  const auto stratum = find_column(csv, "stratum");
  const auto cluster = find_column(csv, "cluster");
  require(!(stratum && cluster), Errc::ConfigError, "a file may carry a stratum column or a cluster column, not both");

  CovariateTable table;
  std::vector<std::size_t> numeric;
  for (std::size_t c = 0; c < csv.header.size(); ++c) {
    if (c == stratum || c == cluster) continue;
    if (!to_number(csv.rows.front()[c]))
      fail(Errc::MixedType, "column '" + csv.header[c] + "' starts with text '" + csv.rows.front()[c] +
                                "'; only stratum and cluster columns may hold labels");
    numeric.push_back(c);
    table.names.push_back(csv.header[c]);
  }
  require(!numeric.empty(), Errc::EmptyFile, "no covariate columns");

  const auto n = static_cast<Index>(csv.rows.size());
  table.values.resize(n, static_cast<Index>(numeric.size()));
  for (Index i = 0; i < n; ++i) {
    const auto row = static_cast<std::size_t>(i);
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      const auto value = to_number(csv.rows[row][numeric[j]]);
      if (!value) bad_cell(csv, row, numeric[j]);
      table.values(i, static_cast<Index>(j)) = *value;
    }
  }

  if (const auto label_col = stratum ? stratum : cluster) {
    table.grouping = stratum ? CovariateTable::Grouping::Stratum : CovariateTable::Grouping::Cluster;
    std::map<std::string, Index> ids;
    for (std::size_t row = 0; row < csv.rows.size(); ++row) {
      const auto& label = csv.rows[row][*label_col];
      if (label.empty())
        fail(Errc::ParseError, "line " + std::to_string(csv.lines[row]) + ": empty " + csv.header[*label_col] + " label");
      auto [it, inserted] = ids.emplace(label, static_cast<Index>(table.label_names.size()));
      if (inserted) table.label_names.push_back(label);
      table.labels.push_back(it->second);
    }
  }
  return table;
}

CovariateTable parse_covariates(const std::string& path) {
  auto in = open(path);
  return parse_covariates(in);
}

void write_assignment(std::ostream& out, const Assignment& w) {
  out << "unit,assignment\n";
  for (Index i = 0; i < w.size(); ++i) out << i + 1 << ',' << int(w[i]) << '\n';
}

Assignment read_assignment(std::istream& in) {
  const Csv csv = read_csv(in);
  const auto col = find_column(csv, "assignment");
  require(col.has_value(), Errc::ParseError, "missing 'assignment' column");
  Assignment w(static_cast<Index>(csv.rows.size()));
  for (std::size_t row = 0; row < csv.rows.size(); ++row) {
    const auto& cell = csv.rows[row][*col];
    if (cell != "0" && cell != "1")
      fail(Errc::ParseError, "line " + std::to_string(csv.lines[row]) + ": assignment must be 0 or 1, got '" + cell + "'");
    w[static_cast<Index>(row)] = cell == "1";
  }
  return w;
}

void write_draws(std::ostream& out, std::span<const AssignmentDraw> draws) {
  require(!draws.empty(), Errc::ConfigInvalid, "nothing to write");
  const Index n = draws.front().assignment.size();
  out << "unit";
  for (std::size_t b = 0; b < draws.size(); ++b) out << ",draw_" << b + 1;
  out << '\n';
  for (Index i = 0; i < n; ++i) {
    out << i + 1;
    for (const auto& d : draws) out << ',' << int(d.assignment[i]);
    out << '\n';
  }
  out << 'M';
  for (const auto& d : draws) out << ',' << format_number(d.m_value);
  out << '\n';
}

OutcomeData parse_outcomes(std::istream& in) {
  const Csv csv = read_csv(in);
  const auto y_col = find_column(csv, "y");
  const auto w_col = find_column(csv, "w");
  require(y_col && w_col, Errc::ParseError, "outcome file needs columns 'y' and 'w'");
  OutcomeData data;
  const auto n = static_cast<Index>(csv.rows.size());
  data.observed.resize(n);
  data.assignment.resize(n);
  for (std::size_t row = 0; row < csv.rows.size(); ++row) {
    const auto y = to_number(csv.rows[row][*y_col]);
    if (!y) bad_cell(csv, row, *y_col);
    const auto& w = csv.rows[row][*w_col];
    if (w != "0" && w != "1") bad_cell(csv, row, *w_col);
    data.observed[static_cast<Index>(row)] = *y;
    data.assignment[static_cast<Index>(row)] = w == "1";
  }
  return data;
}

OutcomeData parse_outcomes(const std::string& path) {
  auto in = open(path);
  return parse_outcomes(in);
}

std::string report_json(const InferenceReport& report) {
  nlohmann::ordered_json j;
  j["tau_hat"] = report.tau_hat;
  j["p_value"] = report.p_value;
  j["ci"] = {report.ci.first, report.ci.second};
  j["alpha"] = report.alpha;
  j["B"] = report.draws_used;
  if (report.l_n)
    j["L_n"] = *report.l_n;
  else
    j["L_n"] = nullptr;
  return j.dump(2);
}

void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows) {
  out << "Method,Bias,SD,Size,Power,Coverage,Length,RunTime,L_n,Iterations\n";
  for (const auto& row : rows) {
    out << row.method;
    for (double v : {row.bias, row.sd, row.size, row.power, row.coverage, row.length})
      out << ',' << format_number(1000.0 * v);
    out << ',' << format_number(row.run_time_seconds) << ',' << format_number(row.l_n) << ','
        << format_number(row.mean_iterations) << '\n';
  }
}

namespace {

std::vector<Index> index_list(const nlohmann::json& j, const char* key) {
  require(j.contains(key) && j.at(key).is_array(), Errc::ConfigError, std::string("design needs array '") + key + "'");
  return j.at(key).get<std::vector<Index>>();
}

Design parse_design(const nlohmann::json& j, Index n) {
  const std::string kind = lower(j.value("kind", std::string("simple")));
  if (kind == "simple") return SimpleDesign{j.value("treated", n / 2)};
  if (kind == "sequential") return SequentialDesign{index_list(j, "stage_sizes"), index_list(j, "stage_treated")};
  if (kind == "stratified") {
    const auto sizes = index_list(j, "stratum_sizes");
    const auto treated = index_list(j, "stratum_treated");
    require(sizes.size() == treated.size(), Errc::ConfigError, "stratum_sizes and stratum_treated differ in length");
    return contiguous_strata(sizes, treated);
  }
  if (kind == "cluster") {
    const Index count = j.at("clusters").get<Index>();
    return contiguous_clusters(count, j.at("cluster_size").get<Index>(), j.value("clusters_treated", count / 2));
  }
  fail(Errc::ConfigError, "unknown design kind '" + kind + "'");
}

SamplerConfig parse_sampler(const nlohmann::json& j) {
  SamplerConfig config;
  config.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("L")) config.local_pairs = j.at("L").get<Index>();
  if (j.contains("S")) config.shake_pairs = j.at("S").get<Index>();
  config.psrr_gamma = j.value("gamma", config.psrr_gamma);
  config.max_iterations = j.value("max_iter", config.max_iterations);
  return config;
}

}  // namespace

SimScenario parse_scenario(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ParseError, std::string("scenario: ") + e.what());
  }
  try {
    SimScenario s;
    s.n = j.at("n").get<Index>();
    s.p = j.at("p").get<Index>();
    s.design = j.contains("design") ? parse_design(j.at("design"), s.n) : Design{SimpleDesign{s.n / 2}};
    s.effect = j.value("effect", s.effect);
    s.acceptance_probability = j.value("pa", s.acceptance_probability);
    const int given = int(j.contains("threshold")) + int(j.contains("stage_shares")) + int(j.contains("stage_thresholds"));
    require(given <= 1, Errc::ConfigError, "threshold, stage_shares and stage_thresholds are mutually exclusive");
    require(!(given == 1 && j.contains("pa")), Errc::ConfigError, "pa conflicts with an explicit threshold");
    if (j.contains("threshold")) s.thresholds = j.at("threshold").get<double>();
    if (j.contains("stage_shares")) s.thresholds = StageShares{j.at("stage_shares").get<std::vector<double>>()};
    if (j.contains("stage_thresholds"))
      s.thresholds = StageThresholds{j.at("stage_thresholds").get<std::vector<double>>()};
    require(j.contains("samplers") && j.at("samplers").is_array(), Errc::ConfigError, "scenario needs a 'samplers' array");
    for (const auto& entry : j.at("samplers")) {
      NamedSampler named;
      named.config = parse_sampler(entry);
      named.name = entry.value("name", std::string(method_name(named.config.method)));
      s.samplers.push_back(std::move(named));
    }
    s.replications = j.value("replications", s.replications);
    s.draws = j.value("draws", s.draws);
    s.alpha = j.value("alpha", s.alpha);
    s.ci_alpha = j.value("ci_alpha", s.ci_alpha);
    s.seed = j.value("seed", s.seed);
    s.threads = j.value("threads", s.threads);
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ConfigError, std::string("scenario: ") + e.what());
  }
}

SimScenario parse_scenario(const std::string& path) {
  auto in = open(path);
  return parse_scenario(in);
}

std::vector<double> parse_number_list(const std::string& text, const std::string& what) {
  std::vector<double> values;
  for (const auto& cell : split(text)) {
    const auto value = to_number(cell);
    require(value.has_value(), Errc::ConfigError, what + ": '" + cell + "' is not a number");
    values.push_back(*value);
  }
  return values;
}

}  // namespace rerand
