#pragma once

// Replica orchestration, gated statistics and the command line front end.
//
// Replica r of an experiment uses the disorder seed base_seed + r, whatever
// the number of worker threads; rows come out in a fixed order.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sklab/order_params.hpp"

namespace sklab {

enum class Experiment {
  sequences,
  recursion_stats,
  zeta_cov,
  free_energy,
  first_moment,
  second_moment,
  moment_ratio,
  concentration,
  tap_compare,
  toy_model,
};

enum class ReportFormat { csv, json };

std::string to_string(Experiment e);
Experiment parse_experiment(const std::string& name);
std::string to_string(ReportFormat f);
ReportFormat parse_format(const std::string& name);

struct ExperimentConfig {
  Experiment experiment = Experiment::sequences;
  double beta = 0.2;
  double h = 0.5;
  std::vector<std::size_t> n_values;
  int k = 4;
  // Conditioning levels for the moment experiments; empty means {k}.
  std::vector<int> k_values;
  int replicas = 10;
  std::uint64_t base_seed = 1;
  std::string out_path;  // empty: nothing written
  ReportFormat format = ReportFormat::csv;
  int quad_nodes = 61;
  double tol = 1e-13;
  std::vector<double> m_values;  // toy-model grid; empty means 0, 0.1, ..., 0.9
  unsigned threads = 0;          // 0: hardware concurrency

  ModelParams model() const;
  std::vector<int> levels() const;
  // Throws DomainError on violated invariants (replicas >= 1, N >= 2, k < min N,
  // enumeration limits of the exact experiments).
  void validate() const;
};

ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);

// One gated observable. pass <=> |mean - target| <= max(abs_tol, z_gate * stderr).
struct ReportRow {
  std::string observable;
  std::size_t n = 0;
  int k = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
  double target = 0.0;
  double z = 0.0;  // (mean - target) / stderr, 0 when stderr is 0
  double abs_tol = 0.0;
  double z_gate = 3.0;
  bool pass = false;

  static ReportRow make(std::string observable, std::size_t n, int k, double mean,
                        double stderr_, double target, double abs_tol, double z_gate = 3.0);
  bool recompute_pass() const;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;
  std::string version;

  bool all_pass() const;
  // Throws DomainError when absent.
  const ReportRow& find(const std::string& observable, std::size_t n, int k) const;
  std::vector<const ReportRow*> select(const std::string& prefix) const;
};

struct Summary {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double stderr_ = 0.0;
};

Summary summarize(const std::vector<double>& values);

// Least squares fit y = a + b x; returns b and its standard error.
struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double slope_stderr = 0.0;
  double r_squared = 0.0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

ExperimentReport run_experiment(const ExperimentConfig& config);
ExperimentReport concentration_experiment(const ExperimentConfig& config);
ExperimentReport moment_ratio_experiment(const ExperimentConfig& config);

// CSV: header row then one row per observable. The metadata (config echo,
// versions, wall time) goes to the JSON form only; write_report writes the
// CSV plus a sidecar <out>.meta.json.
void write_report_csv(std::ostream& out, const ExperimentReport& report);
void write_report_json(std::ostream& out, const ExperimentReport& report);
void write_report(const ExperimentReport& report);

// Command line entry point. Exit codes: 0 success, 1 usage error, 2 numerical
// failure, 3 failed gate under --strict.
int cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sklab
