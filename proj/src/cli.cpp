#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>

#include "CLI11.hpp"

#include "sklab/cavity_recursion.hpp"
#include "sklab/csv.hpp"
#include "sklab/error.hpp"
#include "sklab/lab_harness.hpp"
#include "sklab/order_params.hpp"
#include "sklab/sk_model.hpp"
#include "sklab/vectorspace.hpp"

namespace sklab {

namespace {

std::string scalar(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.15g", v);
  return buf;
}

struct Options {
  double beta = 0.2;
  double h = 0.5;
  std::vector<std::size_t> n{200};
  int k = 4;
  std::vector<int> levels;
  int replicas = 10;
  std::uint64_t seed = 1;
  int quad_nodes = 61;
  double tol = 1e-13;
  std::string out;
  std::string format = "csv";
  std::string disorder_file;
  unsigned threads = 0;
  double m = 0.5;
  std::string config;
  std::string name;
  bool strict = false;

  ModelParams model() const {
    ModelParams p;
    p.beta = beta;
    p.h = h;
    p.quad_nodes = quad_nodes;
    p.tol = tol;
    p.validate();
    return p;
  }
};

// Either the named file or the supplied fallback stream.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw DomainError("cannot open " + path + " for writing");
      stream_ = file_.get();
    }
  }
  std::ostream& get() { return *stream_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_;
};

Disorder instance(const Options& o, std::size_t n, std::uint64_t seed) {
  if (!o.disorder_file.empty()) return load_disorder(o.disorder_file);
  return sample_disorder(n, seed);
}

void cmd_sequences(const Options& o, std::ostream& out) {
  const auto order = build_sequences(o.model(), o.k);
  Sink sink(o.out, out);
  auto& s = sink.get();
  s << "k,gamma,rho,gamma_sq_partial,rho_gap,gamma_sq_gap\n";
  for (std::size_t i = 0; i < order.stages(); ++i) {
    s << i + 1 << ',' << format_double(order.gamma[i]) << ',' << format_double(order.rho[i]) << ','
      << format_double(order.gamma_sq_partial[i]) << ',' << format_double(order.rho_gap[i]) << ','
      << format_double(order.gamma_sq_gap[i]) << '\n';
  }
}

void cmd_recursion(const Options& o, std::ostream& out) {
  const auto params = o.model();
  const auto d = instance(o, o.n.front(), o.seed);
  const auto order = build_sequences(params, o.k);
  const auto state = run(d, order, params, o.k, true);
  Sink sink(o.out, out);
  write_stats_csv_header(sink.get());
  write_stats_csv(sink.get(), state_stats(state));
}

void cmd_free_energy(const Options& o, std::ostream& out) {
  const auto params = o.model();
  Sink sink(o.out, out);
  auto& s = sink.get();
  s << "seed,N,free_energy\n";
  if (!o.disorder_file.empty()) {
    const auto d = load_disorder(o.disorder_file);
    s << d.seed << ',' << d.n << ','
      << format_double(log_partition_exact(d, params) / static_cast<double>(d.n)) << '\n';
    return;
  }
  for (std::size_t n : o.n) {
    for (int r = 0; r < o.replicas; ++r) {
      const auto seed = o.seed + static_cast<std::uint64_t>(r);
      const auto d = sample_disorder(n, seed);
      s << seed << ',' << n << ','
        << format_double(log_partition_exact(d, params) / static_cast<double>(n)) << '\n';
    }
  }
}

void cmd_moments(const Options& o, std::ostream& out) {
  const auto params = o.model();
  const auto d = instance(o, o.n.front(), o.seed);
  const auto order = build_sequences(params, std::max(1, o.k));
  if (static_cast<std::size_t>(o.k) >= d.n) throw DomainError("moments: need k < N");
  Sink sink(o.out, out);
  auto& s = sink.get();
  s << "k,first_moment,second_moment\n";
  auto state = init(d, order, params);
  for (int level = 0; level <= o.k; ++level) {
    while (state.k < level + 1) step(state);
    s << level << ',' << format_double(conditional_first_moment(state, d)) << ',';
    if (d.n <= kMaxPairN) s << format_double(conditional_second_moment(state, d));
    s << '\n';
  }
}

int cmd_experiment(const Options& o, const CLI::App& sub, const CLI::App& app, std::ostream& out,
                   std::ostream& err) {
  ExperimentConfig c;
  if (!o.config.empty()) c = load_config(o.config);
  auto given = [&](const char* flag) {
    const auto* opt = app.get_option_no_throw(flag);
    if (opt == nullptr) opt = sub.get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };
  if (!o.name.empty()) c.experiment = parse_experiment(o.name);
  if (given("--beta")) c.beta = o.beta;
  if (given("--h")) c.h = o.h;
  if (given("--n")) c.n_values = o.n;
  if (given("--k")) c.k = o.k;
  if (given("--levels")) c.k_values = o.levels;
  if (given("--replicas")) c.replicas = o.replicas;
  if (given("--seed")) c.base_seed = o.seed;
  if (given("--quad-nodes")) c.quad_nodes = o.quad_nodes;
  if (given("--tol")) c.tol = o.tol;
  if (given("--out")) c.out_path = o.out;
  if (given("--format")) c.format = parse_format(o.format);
  if (given("--threads")) c.threads = o.threads;
  if (o.config.empty() && o.name.empty()) {
    throw DomainError("experiment: give --config <path> or --name <experiment>");
  }
  const auto report = run_experiment(c);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  if (c.out_path.empty()) {
    if (c.format == ReportFormat::json) write_report_json(out, report);
    else write_report_csv(out, report);
  }
  if (o.strict && !report.all_pass()) {
    std::size_t failed = 0;
    for (const auto& r : report.rows) failed += r.pass ? 0 : 1;
    err << failed << " of " << report.rows.size() << " rows failed their gate\n";
    return 3;
  }
  return 0;
}

}  // namespace

int cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Exact and Monte Carlo experiments on the high temperature SK model", "sklab"};
  app.set_help_flag("--help", "print this help and exit");
  app.require_subcommand(1);
  app.add_option("--beta", o.beta, "inverse temperature (>= 0)");
  app.add_option("--h", o.h, "external field");
  app.add_option("--n", o.n, "system size(s)")->delimiter(',');
  app.add_option("--k", o.k, "stage / conditioning level / TAP iterations");
  app.add_option("--replicas", o.replicas, "replicas per system size");
  app.add_option("--seed", o.seed, "base seed; replica r uses seed + r");
  app.add_option("--quad-nodes", o.quad_nodes, "Gauss-Hermite nodes");
  app.add_option("--tol", o.tol, "fixed point tolerance");
  app.add_option("--out", o.out, "output path (default: standard output)");
  app.add_option("--format", o.format, "report format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--disorder-file", o.disorder_file, "replay a stored disorder sample");
  app.add_option("--threads", o.threads, "worker threads (0: all cores)");

  auto* rs = app.add_subcommand("rs", "replica symmetric free energy");
  auto* solve = app.add_subcommand("solve-q", "overlap fixed point q");
  auto* at = app.add_subcommand("at", "de Almeida-Thouless value beta^2 E cosh^-4");
  auto* seq = app.add_subcommand("sequences", "gamma_k, rho_k and their gaps to q");
  auto* rec = app.add_subcommand("recursion", "run the recursion on one instance");
  auto* fe = app.add_subcommand("free-energy", "exact (1/N) log Z_N per replica");
  auto* mom = app.add_subcommand("moments", "conditional first and second moments");
  auto* toy = app.add_subcommand("toy", "second-moment exponent of the centered toy model");
  toy->add_option("--m", o.m, "spin mean in (-1, 1)");
  auto* exp = app.add_subcommand("experiment", "run an experiment preset");
  exp->add_option("--config", o.config, "JSON experiment config");
  exp->add_option("--name", o.name, "experiment name when no config is given");
  exp->add_option("--levels", o.levels, "conditioning levels")->delimiter(',');
  exp->add_flag("--strict", o.strict, "exit 3 when any row fails its gate");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return 1;
  }

  try {
    if (rs->parsed()) {
      out << scalar(rs_free_energy(o.model())) << '\n';
    } else if (solve->parsed()) {
      out << scalar(solve_q(o.model())) << '\n';
    } else if (at->parsed()) {
      const auto p = o.model();
      const double q = p.h == 0.0 ? 0.0 : solve_q(p);
      out << scalar(at_value(p, q)) << '\n';
    } else if (seq->parsed()) {
      cmd_sequences(o, out);
    } else if (rec->parsed()) {
      cmd_recursion(o, out);
    } else if (fe->parsed()) {
      cmd_free_energy(o, out);
    } else if (mom->parsed()) {
      cmd_moments(o, out);
    } else if (toy->parsed()) {
      out << scalar(toy_exponent(o.beta, o.m)) << '\n';
    } else if (exp->parsed()) {
      return cmd_experiment(o, *exp, app, out, err);
    }
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"sklab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace sklab
