#include "sklab/lab_harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "sklab/cavity_recursion.hpp"
#include "sklab/csv.hpp"
#include "sklab/error.hpp"
#include "sklab/sk_model.hpp"
#include "sklab/vectorspace.hpp"

#ifndef SKLAB_VERSION
#define SKLAB_VERSION "0.0.0"
#endif

namespace sklab {

using json = nlohmann::json;

namespace {

constexpr double kExactSlack = 1e-10;

const std::pair<Experiment, const char*> kExperimentNames[] = {
    {Experiment::sequences, "sequences"},
    {Experiment::recursion_stats, "recursion-stats"},
    {Experiment::zeta_cov, "zeta-cov"},
    {Experiment::free_energy, "free-energy"},
    {Experiment::first_moment, "first-moment"},
    {Experiment::second_moment, "second-moment"},
    {Experiment::moment_ratio, "moment-ratio"},
    {Experiment::concentration, "concentration"},
    {Experiment::tap_compare, "tap-compare"},
    {Experiment::toy_model, "toy-model"},
};

std::string short_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

// Runs fn(i) for i in [0, count) on a pool of workers; results are indexed by
// i, so the output never depends on scheduling.
template <class T, class Fn>
std::vector<T> parallel_map(std::size_t count, unsigned threads, Fn&& fn) {
  std::vector<T> out(count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        out[i] = fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  unsigned workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, count));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::uint64_t replica_seed(const ExperimentConfig& c, std::size_t r) { return c.base_seed + r; }

// Row for "value must not rise": mean is the positive part of the increase.
ReportRow increase_row(const std::string& name, std::size_t n, int k, double delta, double se,
                       double z_gate = 2.0) {
  return ReportRow::make(name, n, k, std::max(0.0, delta), se, 0.0, 0.0, z_gate);
}

ReportRow count_row(const std::string& name, std::size_t n, int k, std::size_t count) {
  return ReportRow::make(name, n, k, static_cast<double>(count), 0.0, 0.0, 0.0, 0.0);
}

Summary paired_difference(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = b[i] - a[i];
  return summarize(d);
}

// --- sequences ------------------------------------------------------------

void sequences_rows(const ExperimentConfig& c, ExperimentReport& rep) {
  const auto params = c.model();
  const auto order = build_sequences(params, c.k);
  rep.rows.push_back(ReportRow::make("q", 0, 0, order.q, 0.0, order.q, 0.0, 0.0));
  std::size_t not_increasing = 0;
  std::size_t outside = 0;
  for (int k = 1; k <= c.k; ++k) {
    const std::size_t i = static_cast<std::size_t>(k - 1);
    rep.rows.push_back(ReportRow::make("rho", 0, k, order.rho[i], 0.0, order.q,
                                       order.residual_variance(i), 0.0));
    if (k >= 2 && !(order.rho_gap[i] < order.rho_gap[i - 1])) ++not_increasing;
    const double lower_gap = (k == 1) ? order.q : order.gamma_sq_gap[i - 1];
    if (!(order.rho_gap[i] > 0.0 && order.rho_gap[i] < lower_gap)) ++outside;
  }
  rep.rows.push_back(count_row("rho_not_increasing", 0, c.k, not_increasing));
  rep.rows.push_back(count_row("rho_outside_sandwich", 0, c.k, outside));
  rep.rows.push_back(ReportRow::make("at_value", 0, 0, order.at_value, 0.0, 0.0, 1.0, 0.0));
}

// --- recursion-stats ------------------------------------------------------

double recursion_abs_tol(const std::string& obs, std::size_t n) {
  if (obs.starts_with("phi_xi") || obs.starts_with("zeta_overlap")) return 0.0;
  if (obs.starts_with("zeta_norm2")) return 0.05;
  return n >= 1000 ? 0.02 : 0.05;
}

void recursion_stats_rows(const ExperimentConfig& c, ExperimentReport& rep) {
  const auto params = c.model();
  const auto order = build_sequences(params, c.k);
  std::map<std::string, double> pooled_mad_prev;
  std::size_t n_prev = 0;
  for (std::size_t n : c.n_values) {
    auto records = parallel_map<StatRecord>(c.replicas, c.threads, [&](std::size_t r) {
      const auto d = sample_disorder(n, replica_seed(c, r));
      return state_stats(run(d, order, params, c.k));
    });
    const auto& first = records.front().rows;
    const double r_count = static_cast<double>(records.size());
    double pooled_sum = 0.0;
    std::size_t pooled_terms = 0;
    for (std::size_t o = 0; o < first.size(); ++o) {
      const std::string& name = first[o].observable;
      const double target = first[o].target;
      std::vector<double> values;
      std::vector<double> devs;
      for (const auto& rec : records) {
        values.push_back(rec.rows[o].value);
        devs.push_back(std::fabs(rec.rows[o].value - target));
      }
      const auto s = summarize(values);
      rep.rows.push_back(
          ReportRow::make(name, n, c.k, s.mean, s.stderr_, target, recursion_abs_tol(name, n)));
      const auto mad = summarize(devs);
      rep.rows.push_back(ReportRow::make("mad:" + name, n, c.k, mad.mean, mad.stderr_, 0.0, 1.0));
      if (name.starts_with("phi_xi") && records.size() >= 2) {
        const double scaled = s.variance * static_cast<double>(n);
        rep.rows.push_back(ReportRow::make("var:" + name, n, c.k, scaled,
                                           scaled * std::sqrt(2.0 / (r_count - 1.0)), 1.0, 0.25,
                                           0.0));
      }
      const std::string prefix = "m_phi(" + std::to_string(c.k) + ",";
      if (name.starts_with(prefix) && name != prefix + std::to_string(c.k) + ")") {
        pooled_sum += mad.mean;
        ++pooled_terms;
      }
    }
    if (pooled_terms > 0) {
      const std::string pooled = "mad:m_phi(" + std::to_string(c.k) + ",*)";
      const double value = pooled_sum / static_cast<double>(pooled_terms);
      rep.rows.push_back(ReportRow::make(pooled, n, c.k, value, 0.0, 0.0, 1.0));
      if (n_prev != 0) {
        const double target = std::sqrt(static_cast<double>(n_prev) / static_cast<double>(n));
        rep.rows.push_back(ReportRow::make("mad_ratio:m_phi(" + std::to_string(c.k) + ",*)", n,
                                           c.k, value / pooled_mad_prev[pooled], 0.0, target,
                                           0.2 * target, 0.0));
      }
      pooled_mad_prev[pooled] = value;
    }
    n_prev = n;
  }
}

// --- zeta-cov -------------------------------------------------------------

void zeta_cov_rows(const ExperimentConfig& c, ExperimentReport& rep) {
  const auto params = c.model();
  const auto order = build_sequences(params, 1);
  for (std::size_t n : c.n_values) {
    auto zetas = parallel_map<Vec>(c.replicas, c.threads, [&](std::size_t r) {
      const auto d = sample_disorder(n, replica_seed(c, r));
      return run(d, order, params, 2).zeta(1);
    });
    const auto cov = zeta1_covariance_check(zetas);
    rep.rows.push_back(ReportRow::make("zeta1_cov_diag_rel_dev", n, 1, cov.max_diag_rel_dev, 0.0,
                                       0.0, cov.diag_bar, 0.0));
    rep.rows.push_back(ReportRow::make("zeta1_cov_offdiag_abs_dev", n, 1, cov.max_offdiag_abs_dev,
                                       0.0, 0.0, cov.offdiag_bar, 0.0));
    rep.rows.push_back(
        ReportRow::make("zeta1_cov_symmetric", n, 1, cov.symmetric ? 1.0 : 0.0, 0.0, 1.0, 0.0, 0.0));
  }
}

// --- exact enumeration experiments ----------------------------------------

// States at stages L + 1 for every requested conditioning level L.
std::vector<RecursionState> level_states(const Disorder& d, const OrderParams& order,
                                         const ModelParams& params, const std::vector<int>& levels) {
  std::vector<RecursionState> out;
  auto state = init(d, order, params);
  for (int level : levels) {
    while (state.k < level + 1) step(state);
    out.push_back(state);
  }
  return out;
}

OrderParams order_for_levels(const ModelParams& params, const std::vector<int>& levels) {
  const int top = *std::max_element(levels.begin(), levels.end());
  return build_sequences(params, std::max(1, top));
}

double free_energy_abs_tol(std::size_t n) { return n >= 16 ? 0.01 : 0.05; }

void free_energy_rows(const ExperimentConfig& c, ExperimentReport& rep) {
  const auto params = c.model();
  const auto levels = c.levels();
  const auto order = order_for_levels(params, levels);
  const double rs = rs_free_energy(params);
  struct Sample {
    double quenched = 0.0;
    std::vector<double> annealed;
  };
  double prev_gap = 0.0;
  double prev_se = 0.0;
  std::size_t prev_n = 0;
  for (std::size_t n : c.n_values) {
    const auto samples = parallel_map<Sample>(c.replicas, c.threads, [&](std::size_t r) {
      const auto d = sample_disorder(n, replica_seed(c, r));
      Sample s;
      s.quenched = log_partition_exact(d, params) / static_cast<double>(n);
      for (const auto& st : level_states(d, order, params, levels)) {
        s.annealed.push_back(conditional_first_moment(st, d));
      }
      return s;
    });
    std::vector<double> quenched;
    for (const auto& s : samples) quenched.push_back(s.quenched);
    const auto q = summarize(quenched);
    rep.rows.push_back(ReportRow::make("quenched", n, 0, q.mean, q.stderr_, rs, free_energy_abs_tol(n)));
    for (std::size_t l = 0; l < levels.size(); ++l) {
      std::size_t violations = 0;
      for (const auto& s : samples) {
        if (s.quenched > s.annealed[l] + kExactSlack) ++violations;
      }
      rep.rows.push_back(count_row("quenched_above_annealed", n, levels[l], violations));
    }
    const double gap = std::fabs(q.mean - rs);
    if (prev_n != 0) {
      rep.rows.push_back(increase_row(
          "increase:rs_gap(N=" + std::to_string(prev_n) + "->" + std::to_string(n) + ")", n, 0,
          gap - prev_gap, std::hypot(prev_se, q.stderr_)));
    }
    prev_gap = gap;
    prev_se = q.stderr_;
    prev_n = n;
  }
}

struct MomentSample {
  std::vector<double> first;
  std::vector<double> second;
};

std::vector<MomentSample> moment_samples(const ExperimentConfig& c, std::size_t n,
                                         const OrderParams& order, bool with_second) {
  const auto params = c.model();
  const auto levels = c.levels();
  return parallel_map<MomentSample>(c.replicas, c.threads, [&](std::size_t r) {
    const auto d = sample_disorder(n, replica_seed(c, r));
    MomentSample s;
    for (const auto& st : level_states(d, order, params, levels)) {
      s.first.push_back(conditional_first_moment(st, d));
      if (with_second) s.second.push_back(conditional_second_moment(st, d));
    }
    return s;
  });
}

std::vector<double> column(const std::vector<MomentSample>& samples, std::size_t l, bool second) {
  std::vector<double> out;
  for (const auto& s : samples) out.push_back(second ? s.second[l] : s.first[l]);
  return out;
}

void first_moment_rows(const ExperimentConfig& c, ExperimentReport& rep) {
  const auto params = c.model();
  const auto levels = c.levels();
  const auto order = order_for_levels(params, levels);
  const double rs = rs_free_energy(params);
  for (std::size_t n : c.n_values) {
    const auto samples = moment_samples(c, n, order, false);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto s = summarize(column(samples, l, false));
      rep.rows.push_back(ReportRow::make("first_moment", n, levels[l], s.mean, s.stderr_, rs, 0.02));
      if (l > 0) {
        const auto d = paired_difference(column(samples, l - 1, false), column(samples, l, false));
        rep.rows.push_back(increase_row("increase:first_moment(k=" + std::to_string(levels[l - 1]) +
                                            "->" + std::to_string(levels[l]) + ")",
                                        n, levels[l], d.mean, d.stderr_, 3.0));
      }
    }
  }
}

void second_moment_rows(const ExperimentConfig& c, ExperimentReport& rep) {
  const auto params = c.model();
  const auto levels = c.levels();
  const auto order = order_for_levels(params, levels);
  const double rs = rs_free_energy(params);
  for (std::size_t n : c.n_values) {
    const auto samples = moment_samples(c, n, order, true);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto first = column(samples, l, false);
      const auto second = column(samples, l, true);
      const auto s = summarize(second);
      rep.rows.push_back(
          ReportRow::make("second_moment", n, levels[l], s.mean, s.stderr_, 2.0 * rs, 0.05));
      std::size_t violations = 0;
      for (std::size_t r = 0; r < first.size(); ++r) {
        if (second[r] < 2.0 * first[r] - kExactSlack) ++violations;
      }
      rep.rows.push_back(count_row("second_below_first_squared", n, levels[l], violations));
    }
  }
}

void moment_ratio_rows(const ExperimentConfig& c, ExperimentReport& rep) {
  const auto params = c.model();
  const auto levels = c.levels();
  const auto order = order_for_levels(params, levels);
  std::vector<Summary> prev(levels.size());
  std::size_t prev_n = 0;
  for (std::size_t n : c.n_values) {
    const auto samples = moment_samples(c, n, order, true);
    std::vector<std::vector<double>> deficits(levels.size());
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto first = column(samples, l, false);
      const auto second = column(samples, l, true);
      std::size_t negative = 0;
      for (std::size_t r = 0; r < first.size(); ++r) {
        const double d = second[r] - 2.0 * first[r];
        if (d < -kExactSlack) ++negative;
        deficits[l].push_back(d);
      }
      const auto s = summarize(deficits[l]);
      rep.rows.push_back(ReportRow::make("deficit", n, levels[l], s.mean, s.stderr_, 0.0, 0.05));
      rep.rows.push_back(count_row("negative_deficit", n, levels[l], negative));
      if (l > 0) {
        const auto d = paired_difference(deficits[l - 1], deficits[l]);
        rep.rows.push_back(increase_row("increase:deficit(k=" + std::to_string(levels[l - 1]) +
                                            "->" + std::to_string(levels[l]) + ")",
                                        n, levels[l], d.mean, d.stderr_));
      }
      if (prev_n != 0) {
        rep.rows.push_back(increase_row(
            "increase:deficit(N=" + std::to_string(prev_n) + "->" + std::to_string(n) + ")", n,
            levels[l], s.mean - prev[l].mean, std::hypot(s.stderr_, prev[l].stderr_)));
      }
      prev[l] = s;
    }
    prev_n = n;
  }
}

void concentration_rows(const ExperimentConfig& c, ExperimentReport& rep) {
  const auto params = c.model();
  std::vector<double> log_n;
  std::vector<double> log_var;
  bool all_positive = true;
  for (std::size_t n : c.n_values) {
    const auto values = parallel_map<double>(c.replicas, c.threads, [&](std::size_t r) {
      const auto d = sample_disorder(n, replica_seed(c, r));
      return log_partition_exact(d, params) / static_cast<double>(n);
    });
    const auto s = summarize(values);
    const double r_count = static_cast<double>(values.size());
    const double var_se = values.size() > 1 ? s.variance * std::sqrt(2.0 / (r_count - 1.0)) : 0.0;
    rep.rows.push_back(ReportRow::make("variance", n, 0, s.variance, var_se, 0.0, 1.0, 0.0));
    const double sd = std::sqrt(s.variance);
    std::size_t tail = 0;
    for (double v : values) {
      if (sd > 0.0 && std::fabs(v - s.mean) >= 3.0 * sd) ++tail;
    }
    rep.rows.push_back(
        ReportRow::make("tail_fraction", n, 0, tail / r_count, 0.0, 0.0, 0.01, 0.0));
    if (s.variance > 0.0) {
      log_n.push_back(std::log(static_cast<double>(n)));
      log_var.push_back(std::log(s.variance));
    } else {
      all_positive = false;
    }
  }
  if (all_positive && log_n.size() >= 2) {
    const auto fit = fit_line(log_n, log_var);
    // Gate: slope in [-2.8, -0.8]; O(1/N) decay gives -1.
    rep.rows.push_back(
        ReportRow::make("variance_slope", 0, 0, fit.slope, fit.slope_stderr, -1.8, 1.0, 0.0));
  }
}

void tap_compare_rows(const ExperimentConfig& c, ExperimentReport& rep) {
  const auto params = c.model();
  const auto order = build_sequences(params, 1);
  struct Sample {
    double distance = 0.0;
    double increases = 0.0;
  };
  for (std::size_t n : c.n_values) {
    const auto samples = parallel_map<Sample>(c.replicas, c.threads, [&](std::size_t r) {
      const auto d = sample_disorder(n, replica_seed(c, r));
      const auto traj = tap_trajectory(d, order, params, c.k);
      const auto gibbs = gibbs_magnetizations(d, params);
      Vec diff(n);
      for (std::size_t i = 0; i < n; ++i) diff[i] = traj.back()[i] - gibbs[i];
      Sample s;
      s.distance = norm(diff);
      double last = -1.0;
      for (std::size_t t = 1; t < traj.size(); ++t) {
        Vec step(n);
        for (std::size_t i = 0; i < n; ++i) step[i] = traj[t][i] - traj[t - 1][i];
        const double dist = norm(step);
        if (last >= 0.0 && dist > last && dist > 1e-12) s.increases += 1.0;
        last = dist;
      }
      return s;
    });
    std::vector<double> dist;
    std::vector<double> inc;
    for (const auto& s : samples) {
      dist.push_back(s.distance);
      inc.push_back(s.increases);
    }
    const auto sd = summarize(dist);
    const auto si = summarize(inc);
    rep.rows.push_back(ReportRow::make("tap_gibbs_distance", n, c.k, sd.mean, sd.stderr_, 0.0, 0.15));
    rep.rows.push_back(ReportRow::make("tap_step_increases", n, c.k, si.mean, si.stderr_, 0.0, 0.0));
  }
}

void toy_model_rows(const ExperimentConfig& c, ExperimentReport& rep) {
  std::vector<double> grid = c.m_values;
  if (grid.empty()) {
    for (int i = 0; i < 10; ++i) grid.push_back(0.1 * i);
  }
  for (double m : grid) {
    rep.rows.push_back(ReportRow::make("toy_exponent(m=" + short_double(m) + ")", 0, 0,
                                       toy_exponent(c.beta, m), 0.0, 0.0, 1e-8, 0.0));
  }
}

bool is_enumeration(Experiment e) {
  return e == Experiment::free_energy || e == Experiment::first_moment ||
         e == Experiment::second_moment || e == Experiment::moment_ratio ||
         e == Experiment::concentration || e == Experiment::tap_compare;
}

ExperimentReport compute(const ExperimentConfig& c) {
  c.validate();
  ExperimentReport rep;
  rep.config = c;
  rep.version = std::string("sklab ") + SKLAB_VERSION + ", " +
#if defined(__clang__)
                "clang " __clang_version__;
#elif defined(__GNUC__)
                "gcc " __VERSION__;
#else
                "unknown compiler";
#endif
  if (c.experiment == Experiment::recursion_stats || c.experiment == Experiment::zeta_cov) {
    for (std::size_t n : c.n_values) {
      if (c.k > 8 || static_cast<double>(c.k) > static_cast<double>(n) / 50.0) {
        rep.warnings.push_back("k = " + std::to_string(c.k) + " is large for N = " +
                               std::to_string(n) + " (presets keep k <= 8 and k <= N/50)");
      }
    }
  }
  const auto start = std::chrono::steady_clock::now();
  switch (c.experiment) {
    case Experiment::sequences: sequences_rows(c, rep); break;
    case Experiment::recursion_stats: recursion_stats_rows(c, rep); break;
    case Experiment::zeta_cov: zeta_cov_rows(c, rep); break;
    case Experiment::free_energy: free_energy_rows(c, rep); break;
    case Experiment::first_moment: first_moment_rows(c, rep); break;
    case Experiment::second_moment: second_moment_rows(c, rep); break;
    case Experiment::moment_ratio: moment_ratio_rows(c, rep); break;
    case Experiment::concentration: concentration_rows(c, rep); break;
    case Experiment::tap_compare: tap_compare_rows(c, rep); break;
    case Experiment::toy_model: toy_model_rows(c, rep); break;
  }
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

json row_json(const ReportRow& r) {
  return json{{"observable", r.observable}, {"N", r.n},         {"k", r.k},
              {"mean", r.mean},             {"stderr", r.stderr_}, {"target", r.target},
              {"z", r.z},                   {"abs_tol", r.abs_tol}, {"z_gate", r.z_gate},
              {"pass", r.pass}};
}

json config_json(const ExperimentConfig& c) {
  return json{{"experiment", to_string(c.experiment)},
              {"beta", c.beta},
              {"h", c.h},
              {"n_values", c.n_values},
              {"k", c.k},
              {"k_values", c.k_values},
              {"replicas", c.replicas},
              {"base_seed", c.base_seed},
              {"out_path", c.out_path},
              {"format", to_string(c.format)},
              {"quad_nodes", c.quad_nodes},
              {"tol", c.tol},
              {"m_values", c.m_values},
              {"threads", c.threads}};
}

json metadata_json(const ExperimentReport& rep) {
  return json{{"config", config_json(rep.config)},
              {"version", rep.version},
              {"wall_seconds", rep.wall_seconds},
              {"warnings", rep.warnings}};
}

}  // namespace

// --- names ------------------------------------------------------------------

std::string to_string(Experiment e) {
  for (const auto& [value, name] : kExperimentNames) {
    if (value == e) return name;
  }
  return "unknown";
}

Experiment parse_experiment(const std::string& name) {
  for (const auto& [value, text] : kExperimentNames) {
    if (name == text) return value;
  }
  throw DomainError("unknown experiment '" + name + "'");
}

std::string to_string(ReportFormat f) { return f == ReportFormat::csv ? "csv" : "json"; }

ReportFormat parse_format(const std::string& name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  throw DomainError("unknown report format '" + name + "' (expected csv or json)");
}

// --- config -----------------------------------------------------------------

ModelParams ExperimentConfig::model() const {
  ModelParams p;
  p.beta = beta;
  p.h = h;
  p.quad_nodes = quad_nodes;
  p.tol = tol;
  return p;
}

std::vector<int> ExperimentConfig::levels() const {
  if (k_values.empty()) return {k};
  return k_values;
}

void ExperimentConfig::validate() const {
  model().validate();
  if (replicas < 1) throw DomainError("replicas must be >= 1");
  if (k < 0) throw DomainError("k must be >= 0");
  for (int level : k_values) {
    if (level < 0) throw DomainError("k_values entries must be >= 0");
  }
  const bool needs_n = experiment != Experiment::sequences && experiment != Experiment::toy_model;
  if (experiment == Experiment::sequences && k < 1) throw DomainError("sequences: k must be >= 1");
  if (!needs_n) return;
  if (n_values.empty()) throw DomainError(to_string(experiment) + ": n_values must not be empty");
  const std::size_t n_min = *std::min_element(n_values.begin(), n_values.end());
  if (n_min < 2) throw DomainError("all n_values must be >= 2");
  int k_max = k;
  for (int level : levels()) k_max = std::max(k_max, level);
  if (experiment == Experiment::tap_compare) {
    if (k < 1) throw DomainError("tap-compare: k (iterations) must be >= 1");
  } else if (static_cast<std::size_t>(k_max) >= n_min) {
    throw DomainError("k = " + std::to_string(k_max) + " must be < min N = " + std::to_string(n_min));
  }
  if (experiment == Experiment::recursion_stats && k < 1) {
    throw DomainError("recursion-stats: k must be >= 1");
  }
  if (experiment == Experiment::zeta_cov && replicas < 50) {
    throw DomainError("zeta-cov: needs at least 50 replicas");
  }
  if (is_enumeration(experiment)) {
    const std::size_t n_max = *std::max_element(n_values.begin(), n_values.end());
    const bool pairs =
        experiment == Experiment::second_moment || experiment == Experiment::moment_ratio;
    const std::size_t limit = pairs ? kMaxPairN : kMaxQuenchedN;
    if (n_max > limit) {
      throw EnumerationLimitError(to_string(experiment) + ": N = " + std::to_string(n_max) +
                                  " exceeds the enumeration limit " + std::to_string(limit));
    }
  }
}

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DomainError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw DomainError("config: expected a JSON object");
  ExperimentConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "experiment") c.experiment = parse_experiment(value.get<std::string>());
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "h") c.h = value.get<double>();
      else if (key == "n_values") c.n_values = value.get<std::vector<std::size_t>>();
      else if (key == "k") c.k = value.get<int>();
      else if (key == "k_values") c.k_values = value.get<std::vector<int>>();
      else if (key == "replicas") c.replicas = value.get<int>();
      else if (key == "base_seed") c.base_seed = value.get<std::uint64_t>();
      else if (key == "out_path") c.out_path = value.get<std::string>();
      else if (key == "format") c.format = parse_format(value.get<std::string>());
      else if (key == "quad_nodes") c.quad_nodes = value.get<int>();
      else if (key == "tol") c.tol = value.get<double>();
      else if (key == "m_values") c.m_values = value.get<std::vector<double>>();
      else if (key == "threads") c.threads = value.get<unsigned>();
      else throw DomainError("config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw DomainError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_json(buf.str());
}

std::string config_to_json(const ExperimentConfig& config) { return config_json(config).dump(2); }

// --- rows and statistics ----------------------------------------------------

ReportRow ReportRow::make(std::string observable, std::size_t n, int k, double mean,
                          double stderr_, double target, double abs_tol, double z_gate) {
  ReportRow r;
  r.observable = std::move(observable);
  r.n = n;
  r.k = k;
  r.mean = mean;
  r.stderr_ = stderr_;
  r.target = target;
  r.abs_tol = abs_tol;
  r.z_gate = z_gate;
  r.z = stderr_ > 0.0 ? (mean - target) / stderr_ : 0.0;
  r.pass = r.recompute_pass();
  return r;
}

bool ReportRow::recompute_pass() const {
  return std::fabs(mean - target) <= std::max(abs_tol, z_gate * stderr_);
}

bool ExperimentReport::all_pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.pass; });
}

const ReportRow& ExperimentReport::find(const std::string& observable, std::size_t n, int k) const {
  for (const auto& r : rows) {
    if (r.observable == observable && r.n == n && r.k == k) return r;
  }
  throw DomainError("report has no row " + observable + " (N=" + std::to_string(n) +
                    ", k=" + std::to_string(k) + ")");
}

std::vector<const ReportRow*> ExperimentReport::select(const std::string& prefix) const {
  std::vector<const ReportRow*> out;
  for (const auto& r : rows) {
    if (r.observable.starts_with(prefix)) out.push_back(&r);
  }
  return out;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.variance = ss / (n - 1.0);
    s.stderr_ = std::sqrt(s.variance / n);
  }
  return s;
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("fit_line: need >= 2 paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw DomainError("fit_line: x values are all equal");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  const double sse = std::max(0.0, syy - f.slope * sxy);
  f.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  f.slope_stderr = x.size() > 2 ? std::sqrt(sse / (n - 2.0) / sxx) : 0.0;
  return f;
}

// --- experiments --------------------------------------------------------------

ExperimentReport run_experiment(const ExperimentConfig& config) {
  auto rep = compute(config);
  if (!config.out_path.empty()) write_report(rep);
  return rep;
}

ExperimentReport concentration_experiment(const ExperimentConfig& config) {
  auto c = config;
  c.experiment = Experiment::concentration;
  return run_experiment(c);
}

ExperimentReport moment_ratio_experiment(const ExperimentConfig& config) {
  auto c = config;
  c.experiment = Experiment::moment_ratio;
  return run_experiment(c);
}

// --- output -------------------------------------------------------------------

void write_report_csv(std::ostream& out, const ExperimentReport& report) {
  out << "observable,N,k,mean,stderr,target,z,abs_tol,z_gate,pass\n";
  for (const auto& r : report.rows) {
    out << csv_field(r.observable) << ',' << r.n << ',' << r.k << ',' << format_double(r.mean)
        << ',' << format_double(r.stderr_) << ',' << format_double(r.target) << ','
        << format_double(r.z) << ',' << format_double(r.abs_tol) << ','
        << format_double(r.z_gate) << ',' << (r.pass ? "true" : "false") << '\n';
  }
}

void write_report_json(std::ostream& out, const ExperimentReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) rows.push_back(row_json(r));
  out << json{{"metadata", metadata_json(report)}, {"rows", rows}}.dump(2) << '\n';
}

void write_report(const ExperimentReport& report) {
  const auto& path = report.config.out_path;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot write report to " + path);
  if (report.config.format == ReportFormat::json) {
    write_report_json(out, report);
  } else {
    write_report_csv(out, report);
    std::ofstream meta(path + ".meta.json", std::ios::binary);
    if (!meta) throw DomainError("cannot write report metadata to " + path + ".meta.json");
    meta << metadata_json(report).dump(2) << '\n';
  }
  if (!out) throw NumericalError("write failed for " + path);
}

}  // namespace sklab
