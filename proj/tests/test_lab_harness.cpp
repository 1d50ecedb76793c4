#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "sklab/error.hpp"
#include "sklab/lab_harness.hpp"
#include "sklab/order_params.hpp"

using namespace sklab;

namespace {

std::string csv_of(const ExperimentReport& rep) {
  std::ostringstream out;
  write_report_csv(out, rep);
  return out.str();
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli(args, out, err);
  return {code, out.str(), err.str()};
}

ExperimentConfig small(Experiment e) {
  ExperimentConfig c;
  c.experiment = e;
  c.n_values = {6, 8};
  c.k = 2;
  c.replicas = 6;
  return c;
}

}  // namespace

TEST_CASE("row gate") {
  auto r = ReportRow::make("x", 10, 1, 1.04, 0.01, 1.0, 0.05);
  CHECK(r.pass);
  CHECK(r.z == doctest::Approx(4.0));
  r = ReportRow::make("x", 10, 1, 1.07, 0.01, 1.0, 0.05);
  CHECK(!r.pass);
  r = ReportRow::make("x", 10, 1, 1.07, 0.03, 1.0, 0.05);
  CHECK(r.pass);
  r.mean = 2.0;
  CHECK(!r.recompute_pass());
  CHECK(ReportRow::make("x", 1, 0, 0.0, 0.0, 0.0, 0.0).pass);
}

TEST_CASE("summaries and line fits") {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == doctest::Approx(2.5));
  CHECK(s.variance == doctest::Approx(5.0 / 3.0));
  CHECK(s.stderr_ == doctest::Approx(std::sqrt(5.0 / 12.0)));
  const auto f = fit_line({0.0, 1.0, 2.0, 3.0}, {1.0, 3.0, 5.0, 7.0});
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.r_squared == doctest::Approx(1.0));
}

TEST_CASE("config parsing") {
  const auto c = parse_config_json(R"({"experiment": "first-moment", "beta": 0.15, "n_values": [10, 12],
                                      "k_values": [0, 2], "replicas": 4, "format": "json"})");
  CHECK(c.experiment == Experiment::first_moment);
  CHECK(c.beta == 0.15);
  CHECK(c.n_values == std::vector<std::size_t>{10, 12});
  CHECK(c.levels() == std::vector<int>{0, 2});
  CHECK(c.format == ReportFormat::json);
  const auto back = parse_config_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));

  CHECK_THROWS_AS(parse_config_json(R"({"experiment": "sequences", "bogus": 1})"), DomainError);
  CHECK_THROWS_AS(parse_config_json(R"({"experiment": "nope"})"), DomainError);
  CHECK_THROWS_AS(parse_config_json(R"({"beta": "hot"})"), DomainError);
  CHECK_THROWS_AS(parse_config_json("[1, 2]"), DomainError);
  CHECK_THROWS_AS(parse_config_json("{"), DomainError);
  CHECK_THROWS_AS(parse_config_json(R"({"experiment": "first-moment", "n_values": [30]})"),
                  EnumerationLimitError);
  CHECK_THROWS_AS(parse_config_json(R"({"experiment": "zeta-cov", "replicas": 10})"), DomainError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), DomainError);
  for (auto e : {Experiment::sequences, Experiment::tap_compare, Experiment::toy_model}) {
    CHECK(parse_experiment(to_string(e)) == e);
  }
}

TEST_CASE("reports are reproducible across thread counts") {
  auto c = small(Experiment::first_moment);
  c.k_values = {0, 1, 2};
  c.threads = 1;
  const auto one = csv_of(run_experiment(c));
  c.threads = 3;
  const auto three = csv_of(run_experiment(c));
  CHECK(one == three);
  CHECK(one == csv_of(run_experiment(c)));
  CHECK(one.starts_with("observable,N,k,mean,stderr,target,z,abs_tol,z_gate,pass\n"));
}

TEST_CASE("sequences experiment") {
  ExperimentConfig c;
  c.experiment = Experiment::sequences;
  c.beta = 0.3;
  c.k = 8;
  const auto rep = run_experiment(c);
  CHECK(rep.all_pass());
  const auto order = build_sequences(c.model(), 8);
  CHECK(rep.find("rho", 0, 8).mean == order.rho[7]);
  CHECK(rep.find("rho_not_increasing", 0, 8).mean == 0.0);
  CHECK(rep.select("rho(").empty());
  CHECK(rep.select("rho").size() == 10);
  CHECK_THROWS_AS(rep.find("rho", 0, 99), DomainError);
}

TEST_CASE("closed forms at beta = 0") {
  SUBCASE("free energy") {
    auto c = small(Experiment::free_energy);
    c.beta = 0.0;
    c.n_values = {10};
    c.k_values = {0};
    const auto rep = run_experiment(c);
    const auto& row = rep.find("quenched", 10, 0);
    CHECK(row.mean == doctest::Approx(std::log(std::cosh(0.5))).epsilon(1e-13));
    CHECK(row.stderr_ < 1e-15);
    CHECK(rep.find("quenched_above_annealed", 10, 0).mean == 0.0);
  }
  SUBCASE("concentration") {
    auto c = small(Experiment::concentration);
    c.beta = 0.0;
    const auto rep = concentration_experiment(c);
    CHECK(rep.find("variance", 8, 0).mean == 0.0);
    CHECK(rep.select("variance_slope").empty());
  }
  SUBCASE("moment ratio") {
    auto c = small(Experiment::moment_ratio);
    c.beta = 0.0;
    c.k = 0;
    const auto rep = moment_ratio_experiment(c);
    CHECK(rep.find("deficit", 6, 0).mean == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
    CHECK(rep.find("negative_deficit", 8, 0).mean == 0.0);
  }
  SUBCASE("conditioning needs beta > 0") {
    auto c = small(Experiment::moment_ratio);
    c.beta = 0.0;
    CHECK_THROWS_AS(run_experiment(c), DomainError);
  }
}

TEST_CASE("moment experiments respect the pair bound") {
  auto c = small(Experiment::moment_ratio);
  c.beta = 0.3;
  const auto rep = run_experiment(c);
  for (const auto* r : rep.select("deficit")) CHECK(r->mean >= -1e-12);
  CHECK(rep.find("negative_deficit", 6, 2).mean == 0.0);
}

TEST_CASE("toy experiment") {
  ExperimentConfig c;
  c.experiment = Experiment::toy_model;
  c.beta = 0.1;
  c.m_values = {0.0, 0.5};
  const auto rep = run_experiment(c);
  CHECK(rep.all_pass());
  CHECK(rep.rows.size() == 2);
}

TEST_CASE("report files") {
  const auto dir = std::filesystem::temp_directory_path() / "sklab_report_test";
  std::filesystem::create_directories(dir);
  ExperimentConfig c;
  c.experiment = Experiment::sequences;
  c.k = 3;
  c.out_path = (dir / "seq.csv").string();
  write_report(run_experiment(c));
  CHECK(std::filesystem::exists(dir / "seq.csv"));
  CHECK(std::filesystem::exists(dir / "seq.csv.meta.json"));
  c.format = ReportFormat::json;
  c.out_path = (dir / "seq.json").string();
  write_report(run_experiment(c));
  std::ifstream in(dir / "seq.json");
  std::stringstream buf;
  buf << in.rdbuf();
  CHECK(buf.str().find("\"metadata\"") != std::string::npos);
  CHECK(buf.str().find("\"rows\"") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("command line") {
  auto r = run_cli({"rs", "--beta", "0.5", "--h", "0"});
  CHECK(r.code == 0);
  CHECK(r.out == "0.0625\n");
  r = run_cli({"solve-q", "--beta", "0", "--h", "0.5"});
  CHECK(std::stod(r.out) == doctest::Approx(std::tanh(0.5) * std::tanh(0.5)).epsilon(1e-14));
  r = run_cli({"at", "--beta", "1", "--h", "0"});
  CHECK(std::stod(r.out) == doctest::Approx(1.0).epsilon(1e-14));
  r = run_cli({"toy", "--beta", "0.1", "--m", "0.5"});
  CHECK(r.code == 0);
  CHECK(std::fabs(std::stod(r.out)) < 1e-8);
  r = run_cli({"sequences", "--k", "3"});
  CHECK(r.out.starts_with("k,gamma,rho,gamma_sq_partial,rho_gap,gamma_sq_gap\n"));
  r = run_cli({"moments", "--n", "8", "--k", "2"});
  CHECK(r.code == 0);
  CHECK(r.out.starts_with("k,first_moment,second_moment\n0,"));

  CHECK(run_cli({"bogus"}).code == 1);
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"rs", "--beta", "-1"}).code == 1);
  CHECK(run_cli({"experiment"}).code == 1);
  CHECK(run_cli({"free-energy", "--n", "30", "--replicas", "1"}).code == 1);

  r = run_cli({"experiment", "--name", "toy-model", "--beta", "1.3", "--strict"});
  CHECK(r.code == 3);
  if (const char* demo = std::getenv("SKLAB_DEMO_CONFIG")) {
    r = run_cli({"experiment", "--config", demo, "--strict"});
    CHECK(r.code == 0);
    r = run_cli({"experiment", "--config", demo, "--format", "json"});
    CHECK(r.out.starts_with("{"));
  }
}
