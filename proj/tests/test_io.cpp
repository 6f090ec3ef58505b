#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "rerand/balance.hpp"
#include "rerand/chisq.hpp"
#include "rerand/error.hpp"
#include "rerand/io.hpp"

using namespace rerand;
namespace fs = std::filesystem;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return Errc::IoError;
}

CovariateTable covariates_from(const std::string& text) {
  std::istringstream in(text);
  return parse_covariates(in);
}

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("rerand_io_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string file(const std::string& name, const std::string& text) const {
    const auto path = dir / name;
    std::ofstream(path) << text;
    return path.string();
  }
};

struct Run {
  int status = -1;
  std::string out;
};

Run run_cli(const std::string& args) {
  const std::string command = std::string(RERAND_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = ::popen(command.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buffer[4096];
  std::size_t got = 0;
  while ((got = std::fread(buffer, 1, sizeof buffer, pipe)) > 0) r.out.append(buffer, got);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string gaussian_csv(Index n, Index p, std::uint64_t seed) {
  Rng rng(seed);
  std::ostringstream out;
  for (Index j = 0; j < p; ++j) out << (j ? "," : "") << "x" << j + 1;
  out << '\n';
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) out << (j ? "," : "") << format_number(rng.normal());
    out << '\n';
  }
  return out.str();
}

}  // namespace

TEST_CASE("covariate csv") {
  const auto t = covariates_from("x\n1\n-1\n");
  CHECK(t.values.rows() == 2);
  CHECK(t.values.cols() == 1);
  CHECK(t.values(0, 0) == 1.0);
  CHECK(t.values(1, 0) == -1.0);
  CHECK(t.names == std::vector<std::string>{"x"});
  CHECK(t.grouping == CovariateTable::Grouping::None);

  const auto wide = covariates_from("a, b ,c\n1.5,2e-3,+4\n\n-0.25,7,8\r\n");
  CHECK(wide.values.rows() == 2);
  CHECK(wide.values(0, 1) == 2e-3);
  CHECK(wide.values(1, 0) == -0.25);
  CHECK(wide.names[1] == "b");
}

TEST_CASE("label columns") {
  const auto c = covariates_from("x,cluster\n1,a\n2,a\n3,b\n4,b\n");
  CHECK(c.grouping == CovariateTable::Grouping::Cluster);
  CHECK(c.values.cols() == 1);
  const auto groups = c.groups();
  REQUIRE(groups.size() == 2);
  CHECK(groups[0] == std::vector<Index>{0, 1});
  CHECK(groups[1] == std::vector<Index>{2, 3});
  CHECK(c.label_names == std::vector<std::string>{"a", "b"});

  const auto s = covariates_from("Stratum,x,y\nhi,1,2\nlo,3,4\nhi,5,7\n");
  CHECK(s.grouping == CovariateTable::Grouping::Stratum);
  CHECK(s.labels == std::vector<Index>{0, 1, 0});
  CHECK(s.values.cols() == 2);
}

TEST_CASE("covariate errors") {
  CHECK(code_of([] { covariates_from(""); }) == Errc::EmptyFile);
  CHECK(code_of([] { covariates_from("x,y\n"); }) == Errc::EmptyFile);
  CHECK(code_of([] { covariates_from("name,x\nbob,1\n"); }) == Errc::MixedType);
  CHECK(code_of([] { covariates_from("x,stratum,cluster\n1,a,b\n"); }) == Errc::ConfigError);
  CHECK(code_of([] { covariates_from("x,y\n1,2\n3\n"); }) == Errc::ParseError);
  CHECK(code_of([] { covariates_from("x,y\n1,2\n3,nan\n"); }) == Errc::ParseError);
  CHECK(code_of([] { parse_covariates(std::string("/nonexistent/rerand.csv")); }) == Errc::IoError);

  try {
    covariates_from("x,y\n1,2\n3,4\n5,oops\n");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ParseError);
    const std::string msg = e.what();
    CHECK(msg.find("line 4") != std::string::npos);
    CHECK(msg.find("column 2") != std::string::npos);
    CHECK(msg.find("oops") != std::string::npos);
  }
}

TEST_CASE("assignment round trip") {
  Assignment w(5);
  w << 1, 0, 0, 1, 1;
  std::stringstream io;
  write_assignment(io, w);
  CHECK(io.str() == "unit,assignment\n1,1\n2,0\n3,0\n4,1\n5,1\n");
  CHECK(read_assignment(io) == w);

  std::istringstream bad("unit,assignment\n1,2\n");
  CHECK(code_of([&] { read_assignment(bad); }) == Errc::ParseError);
}

TEST_CASE("draws csv") {
  std::vector<AssignmentDraw> draws(2);
  draws[0].assignment = Assignment(3);
  draws[0].assignment << 1, 0, 1;
  draws[0].m_value = 0.5;
  draws[1].assignment = Assignment(3);
  draws[1].assignment << 0, 1, 0;
  draws[1].m_value = 0.25;
  std::ostringstream out;
  write_draws(out, draws);
  CHECK(out.str() == "unit,draw_1,draw_2\n1,1,0\n2,0,1\n3,1,0\nM,0.5,0.25\n");
}

TEST_CASE("outcomes csv") {
  std::istringstream in("w,y\n1,2.5\n0,-1\n");
  const auto d = parse_outcomes(in);
  CHECK(d.observed.size() == 2);
  CHECK(d.observed[0] == 2.5);
  CHECK(d.assignment[0] == 1);
  CHECK(d.assignment[1] == 0);

  std::istringstream missing("y\n1\n");
  CHECK(code_of([&] { parse_outcomes(missing); }) == Errc::ParseError);
  std::istringstream bad_w("y,w\n1,3\n");
  CHECK(code_of([&] { parse_outcomes(bad_w); }) == Errc::ParseError);
}

TEST_CASE("report json") {
  InferenceReport r;
  r.tau_hat = 0.5;
  r.p_value = 0.04;
  r.ci = {0.1, 0.9};
  r.alpha = 0.05;
  r.draws_used = 100;
  r.l_n = 1.25;
  const auto j = nlohmann::json::parse(report_json(r));
  CHECK(j.at("tau_hat") == 0.5);
  CHECK(j.at("p_value") == 0.04);
  CHECK(j.at("ci")[0] == 0.1);
  CHECK(j.at("ci")[1] == 0.9);
  CHECK(j.at("B") == 100);
  CHECK(j.at("L_n") == 1.25);
  r.l_n.reset();
  CHECK(nlohmann::json::parse(report_json(r)).at("L_n").is_null());
}

TEST_CASE("bench csv") {
  BenchRow row;
  row.method = "VNSRR";
  row.bias = 0.001;
  row.sd = 0.25;
  row.size = 0.1;
  row.power = 0.5;
  row.coverage = 0.9;
  row.length = 1.0;
  row.run_time_seconds = 0.125;
  row.l_n = 2.0;
  row.mean_iterations = 3.0;
  const std::vector<BenchRow> rows{row};
  std::ostringstream out;
  write_bench_csv(out, rows);
  std::istringstream lines(out.str());
  std::string header, body;
  std::getline(lines, header);
  std::getline(lines, body);
  CHECK(header == "Method,Bias,SD,Size,Power,Coverage,Length,RunTime,L_n,Iterations");
  CHECK(body == "VNSRR,1,250,100,500,900,1000,0.125,2,3");
}

TEST_CASE("number formatting") {
  CHECK(format_number(0.1) == "0.10000000000000001");
  CHECK(format_number(std::nan("")) == "nan");
  CHECK(format_number(-INFINITY) == "-inf");
  CHECK(parse_number_list("100, 50,1e2", "x") == std::vector<double>{100, 50, 100});
  CHECK(code_of([] { parse_number_list("1,,2", "x"); }) == Errc::ConfigError);
}

TEST_CASE("scenario json") {
  std::istringstream in(R"({
    "n": 40, "p": 3, "effect": 0.2, "pa": 0.01, "replications": 7, "draws": 20, "seed": 9,
    "design": {"kind": "stratified", "stratum_sizes": [20, 20], "stratum_treated": [10, 10]},
    "samplers": [{"method": "cr"}, {"name": "fast", "method": "VNSRR", "L": 4, "S": 2, "max_iter": 1000}]
  })");
  const auto s = parse_scenario(in);
  CHECK(s.n == 40);
  CHECK(s.p == 3);
  CHECK(s.acceptance_probability == 0.01);
  CHECK(s.replications == 7);
  CHECK(s.draws == 20);
  CHECK(s.seed == 9);
  CHECK(!s.thresholds);
  REQUIRE(kind_of(s.design) == DesignKind::Stratified);
  CHECK(std::get<StratifiedDesign>(s.design).strata[1].front() == 20);
  REQUIRE(s.samplers.size() == 2);
  CHECK(s.samplers[0].name == "CR");
  CHECK(s.samplers[1].name == "fast");
  CHECK(s.samplers[1].config.local_pairs == 4);
  CHECK(s.samplers[1].config.shake_pairs == 2);
  CHECK(s.samplers[1].config.max_iterations == 1000);

  std::istringstream seq(R"({"n": 20, "p": 2, "stage_shares": [239, 761],
    "design": {"kind": "sequential", "stage_sizes": [10, 10], "stage_treated": [5, 5]},
    "samplers": [{"method": "vnsrr"}]})");
  const auto t = parse_scenario(seq);
  REQUIRE(t.thresholds);
  CHECK(std::get<StageShares>(*t.thresholds).shares == std::vector<double>{239, 761});

  std::istringstream clusters(R"({"n": 12, "p": 1, "threshold": 0.5,
    "design": {"kind": "cluster", "clusters": 6, "cluster_size": 2, "clusters_treated": 3},
    "samplers": [{"method": "psrr", "gamma": 5}]})");
  const auto c = parse_scenario(clusters);
  CHECK(std::get<ClusterDesign>(c.design).clusters.size() == 6);
  CHECK(std::get<double>(*c.thresholds) == 0.5);
  CHECK(c.samplers[0].config.psrr_gamma == 5.0);
}

TEST_CASE("scenario errors") {
  const auto code = [](const std::string& text) {
    return code_of([&] {
      std::istringstream in(text);
      parse_scenario(in);
    });
  };
  CHECK(code("{not json") == Errc::ParseError);
  CHECK(code(R"({"p": 2, "samplers": []})") == Errc::ConfigError);
  CHECK(code(R"({"n": 10, "p": 2})") == Errc::ConfigError);
  CHECK(code(R"({"n": 10, "p": 2, "pa": 0.1, "threshold": 1, "samplers": []})") == Errc::ConfigError);
  CHECK(code(R"({"n": 10, "p": 2, "threshold": 1, "stage_shares": [1], "samplers": []})") == Errc::ConfigError);
  CHECK(code(R"({"n": 10, "p": 2, "samplers": [{"method": "annealing"}]})") == Errc::ConfigError);
  CHECK(code(R"({"n": 10, "p": 2, "design": {"kind": "blocked"}, "samplers": []})") == Errc::ConfigError);
}

TEST_CASE("command line") {
  Scratch scratch;
  const auto covariates = scratch.file("x.csv", gaussian_csv(30, 2, 5));
  const double a = chisq_quantile(2, 1e-3);

  SUBCASE("assign is deterministic under a seed and meets the threshold") {
    const auto first = run_cli("assign " + covariates + " --seed 42");
    const auto second = run_cli("assign " + covariates + " --seed 42");
    REQUIRE(first.status == 0);
    CHECK(first.out == second.out);
    std::istringstream in(first.out);
    const auto w = read_assignment(in);
    CHECK(w.size() == 30);
    CHECK(w.cast<int>().sum() == 15);
    const auto problem = build_problem<double>(parse_covariates(covariates).values, SimpleDesign{15});
    CHECK(mahalanobis(problem, w) <= a);
  }

  SUBCASE("sample writes the requested number of draws") {
    const auto r = run_cli("sample " + covariates + " --seed 3 --count 4 --method psrr --pa 0.05");
    REQUIRE(r.status == 0);
    std::istringstream in(r.out);
    std::string header;
    std::getline(in, header);
    CHECK(header == "unit,draw_1,draw_2,draw_3,draw_4");
  }

  SUBCASE("infer prints a report") {
    std::ostringstream outcomes;
    outcomes << "y,w\n";
    for (int i = 0; i < 30; ++i) outcomes << (i % 2 ? 1.0 + 0.1 * i : -0.05 * i) << ',' << (i % 2) << '\n';
    const auto path = scratch.file("y.csv", outcomes.str());
    const auto r = run_cli("infer " + covariates + " --outcomes " + path + " --seed 1 --draws 200 --pa 0.1");
    REQUIRE(r.status == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j.at("B") == 200);
    CHECK(j.at("ci")[0].get<double>() < j.at("tau_hat").get<double>());
    CHECK(j.at("ci")[1].get<double>() > j.at("tau_hat").get<double>());
  }

  SUBCASE("bench writes a table") {
    const auto path = scratch.file("s.json", R"({"n": 20, "p": 2, "replications": 2, "draws": 30,
      "design": {"kind": "simple", "treated": 10}, "samplers": [{"method": "cr"}, {"method": "vnsrr"}]})");
    const auto r = run_cli("bench " + path);
    REQUIRE(r.status == 0);
    CHECK(r.out.rfind("Method,Bias,SD", 0) == 0);
    CHECK(r.out.find("\nVNSRR,") != std::string::npos);
  }

  SUBCASE("error codes") {
    const int config = 10 + static_cast<int>(Errc::ConfigError);
    CHECK(run_cli("assign " + covariates + " --pa 0.01 --threshold 1").status == config);
    CHECK(run_cli("assign " + covariates + " --method annealing --seed 1").status == config);
    CHECK(run_cli("assign " + covariates + " --bogus").status == config);
    CHECK(run_cli("assign " + scratch.file("empty.csv", "") + " --seed 1").status ==
          10 + static_cast<int>(Errc::EmptyFile));
    CHECK(run_cli("assign " + scratch.file("text.csv", "x,name\n1,bob\n") + " --seed 1").status ==
          10 + static_cast<int>(Errc::MixedType));
    CHECK(run_cli("assign " + covariates + " --seed 1 --threshold 1e-12 --max-iter 100").status ==
          10 + static_cast<int>(Errc::IterationBudgetExceeded));
  }
}
