#include "sklab/cavity_recursion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "sklab/csv.hpp"
#include "sklab/error.hpp"

namespace sklab {

namespace {

std::string pair_name(const char* base, int a, int b) {
  return std::string(base) + "(" + std::to_string(a) + "," + std::to_string(b) + ")";
}

std::string single_name(const char* base, int a) {
  return std::string(base) + "(" + std::to_string(a) + ")";
}

double max_abs(std::span<const double> v) {
  double worst = 0.0;
  for (double x : v) worst = std::max(worst, std::fabs(x));
  return worst;
}

// xi = G phi and eta = G^T phi in a single sweep over the rows.
void apply_both(const Matrix& g, const Vec& phi, Vec& xi, Vec& eta) {
  const std::size_t n = g.rows();
  xi.assign(n, 0.0);
  eta.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = g.row(i);
    const double phi_i = phi[i];
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      s += row[j] * phi[j];
      eta[j] += row[j] * phi_i;
    }
    xi[i] = s;
  }
}

void project_out(Vec& r, const std::vector<Vec>& basis) {
  for (const auto& b : basis) {
    const double c = inner(r, b);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= c * b[i];
  }
}

}  // namespace

const Matrix& RecursionState::rho(int s) const {
  if (!keep_transients) {
    throw DomainError("rho transients were not retained (run with verification enabled)");
  }
  return rho_list.at(s - 1);
}

const Observation& StatRecord::find(const std::string& observable) const {
  for (const auto& row : rows) {
    if (row.observable == observable) return row;
  }
  throw DomainError("StatRecord: no observable " + observable);
}

RecursionState init(const Disorder& disorder, const OrderParams& order,
                    const ModelParams& params, bool keep_transients) {
  params.validate();
  if (disorder.n < 2) throw DomainError("init: N must be >= 2");
  RecursionState state;
  state.k = 1;
  state.n = disorder.n;
  state.seed = disorder.seed;
  state.g_k = disorder.g;
  state.order = order;
  state.params = params;
  state.keep_transients = keep_transients;

  const double sqrt_q = std::sqrt(order.q);
  state.phi_list.emplace_back(disorder.n, 1.0);
  state.m_list.emplace_back(disorder.n, sqrt_q);
  state.h_list.emplace_back(disorder.n, std::atanh(sqrt_q));
  return state;
}

Vec cavity_field(const RecursionState& state, int k) {
  if (k < 0 || k > static_cast<int>(state.zeta_list.size())) {
    throw DomainError("cavity_field: zeta(" + std::to_string(k) + ") not available");
  }
  const double beta = state.params.beta;
  Vec field(state.n, state.params.h);
  if (k == 0) return field;
  for (int s = 1; s < k; ++s) {
    const double coeff = beta * state.order.gamma.at(s - 1);
    const Vec& z = state.zeta(s);
    for (std::size_t i = 0; i < state.n; ++i) field[i] += coeff * z[i];
  }
  const double last = beta * std::sqrt(state.order.residual_variance(k - 1));
  const Vec& z = state.zeta(k);
  for (std::size_t i = 0; i < state.n; ++i) field[i] += last * z[i];
  return field;
}

void step(RecursionState& state) {
  const int k = state.k;
  const std::size_t n = state.n;
  if (static_cast<std::size_t>(k) >= n) {
    throw DomainError("step: stage " + std::to_string(k) + " requires N > k (N = " +
                      std::to_string(n) + ")");
  }
  if (state.order.stages() + 1 < static_cast<std::size_t>(k)) {
    throw DomainError("step: order parameters cover only " +
                      std::to_string(state.order.stages()) + " stages");
  }
  const double residual = state.order.residual_variance(k - 1);
  if (!(residual > 0.0)) {
    throw NumericalError("step: q - Gamma_" + std::to_string(k - 1) + "^2 is not positive");
  }

  const Vec& phi_k = state.phi(k);
  Vec xi;
  Vec eta;
  apply_both(state.g_k, phi_k, xi, eta);
  Vec zeta(n);
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (std::size_t i = 0; i < n; ++i) zeta[i] = (xi[i] + eta[i]) * inv_sqrt2;
  state.xi_list.push_back(xi);
  state.eta_list.push_back(eta);
  state.zeta_list.push_back(std::move(zeta));

  Vec h_next = cavity_field(state, k);
  Vec m_next(n);
  for (std::size_t i = 0; i < n; ++i) m_next[i] = std::tanh(h_next[i]);

  // Classical Gram-Schmidt applied twice. m(k+1) is close to the span of
  // phi(1..k) (its residual norm is sqrt(q - Gamma_k^2)), so a single pass
  // leaves overlaps of order eps / sqrt(q - Gamma_k^2).
  Vec r = m_next;
  project_out(r, state.phi_list);
  const double denom = norm(r);
  if (!(denom >= kDegeneracyThreshold)) {
    std::ostringstream msg;
    msg << "step: degenerate Gram-Schmidt denominator " << denom << " at stage " << k
        << " (m(k+1) lies in the span of phi(1.." << k << "))";
    throw DegenerateStateError(msg.str());
  }
  project_out(r, state.phi_list);
  double scale = norm(r);
  for (double& v : r) v /= scale;
  double drift = 0.0;
  for (const auto& b : state.phi_list) drift = std::max(drift, std::fabs(inner(r, b)));
  if (drift > kOrthogonalityDrift) {
    project_out(r, state.phi_list);
    scale = norm(r);
    for (double& v : r) v /= scale;
    ++state.reorthogonalizations;
  }

  // g(k+1) = g(k) - rho(k)
  const double c = inner(phi_k, xi);
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix rho;
  if (state.keep_transients) rho = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = state.g_k.row(i);
    const double xi_i = xi[i];
    const double phi_i = phi_k[i];
    for (std::size_t j = 0; j < n; ++j) {
      const double v = (xi_i * phi_k[j] + phi_i * eta[j] - c * phi_i * phi_k[j]) * inv_n;
      row[j] -= v;
      if (state.keep_transients) rho(i, j) = v;
    }
  }
  if (state.keep_transients) state.rho_list.push_back(std::move(rho));

  state.m_list.push_back(std::move(m_next));
  state.h_list.push_back(std::move(h_next));
  state.phi_list.push_back(std::move(r));
  state.k = k + 1;
}

RecursionState step(RecursionState&& state) {
  step(state);
  return std::move(state);
}

RecursionState run(const Disorder& disorder, const OrderParams& order,
                   const ModelParams& params, int stages, bool verify) {
  if (stages < 1) throw DomainError("run: stages must be >= 1");
  if (static_cast<std::size_t>(stages) >= disorder.n) {
    throw DomainError("run: need K < N (K = " + std::to_string(stages) +
                      ", N = " + std::to_string(disorder.n) + ")");
  }
  RecursionState state = init(disorder, order, params, verify);
  if (verify) check_invariants(state);
  while (state.k < stages) {
    step(state);
    if (verify) check_invariants(state);
  }
  return state;
}

InvariantReport measure_invariants(const RecursionState& state) {
  InvariantReport rep;
  const int k = state.k;
  for (int i = 1; i <= k; ++i) {
    rep.max_phi_norm_dev = std::max(rep.max_phi_norm_dev, std::fabs(norm(state.phi(i)) - 1.0));
    for (int j = 1; j < i; ++j) {
      rep.max_phi_overlap =
          std::max(rep.max_phi_overlap, std::fabs(inner(state.phi(i), state.phi(j))));
    }
  }
  for (int s = 1; s < k; ++s) {
    Vec a;
    Vec b;
    apply_both(state.g_k, state.phi(s), a, b);
    rep.max_annihilation = std::max(rep.max_annihilation, max_abs(a) + max_abs(b));
  }
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (int s = 1; s < k; ++s) {
    rep.max_xi_eta_asymmetry =
        std::max(rep.max_xi_eta_asymmetry,
                 std::fabs(inner(state.phi(s), state.xi(s)) - inner(state.eta(s), state.phi(s))));
    for (std::size_t i = 0; i < state.n; ++i) {
      const double expect = (state.xi(s)[i] + state.eta(s)[i]) * inv_sqrt2;
      rep.max_zeta_mismatch = std::max(rep.max_zeta_mismatch, std::fabs(state.zeta(s)[i] - expect));
    }
  }
  for (const auto& m : state.m_list) {
    for (double v : m) {
      if (!(v > -1.0 && v < 1.0)) rep.m_inside_open_cube = false;
    }
  }
  return rep;
}

void check_invariants(const RecursionState& state) {
  const auto rep = measure_invariants(state);
  std::ostringstream msg;
  if (rep.max_phi_overlap >= 1e-10) msg << " phi overlap " << rep.max_phi_overlap << ";";
  if (rep.max_phi_norm_dev >= 1e-12) msg << " phi norm deviation " << rep.max_phi_norm_dev << ";";
  if (rep.max_annihilation >= 1e-10) msg << " g(k) phi(s) = " << rep.max_annihilation << ";";
  if (rep.max_xi_eta_asymmetry >= 1e-12) {
    msg << " <phi,xi> - <eta,phi> = " << rep.max_xi_eta_asymmetry << ";";
  }
  if (rep.max_zeta_mismatch != 0.0) msg << " zeta mismatch " << rep.max_zeta_mismatch << ";";
  if (!rep.m_inside_open_cube) msg << " m outside (-1, 1);";
  const auto text = msg.str();
  if (!text.empty()) {
    throw NumericalError("invariant violation at stage " + std::to_string(state.k) + ":" + text);
  }
}

StatRecord state_stats(const RecursionState& state) {
  StatRecord rec;
  rec.seed = state.seed;
  rec.n = state.n;
  rec.k = state.k;
  const int k = state.k;
  const auto& order = state.order;
  const double q = order.q;
  const double beta = state.params.beta;
  auto add = [&](std::string name, double value, double target) {
    rec.rows.push_back({std::move(name), value, target});
  };

  for (int i = 1; i <= k; ++i) {
    for (int j = 1; j <= i; ++j) {
      const double target = (i == j) ? q : order.rho.at(j - 1);
      add(pair_name("m_overlap", i, j), inner(state.m(i), state.m(j)), target);
    }
  }
  for (int j = 1; j < k; ++j) {
    add(pair_name("m_phi", k, j), inner(state.m(k), state.phi(j)), order.gamma.at(j - 1));
  }
  add(pair_name("m_phi", k, k), inner(state.m(k), state.phi(k)),
      std::sqrt(order.residual_variance(k - 1)));

  for (int s = 1; s < k; ++s) add(single_name("phi_xi", s), inner(state.phi(s), state.xi(s)), 0.0);
  for (int s = 1; s < k; ++s) {
    add(single_name("zeta_norm2", s), inner(state.zeta(s), state.zeta(s)), 1.0);
  }
  for (int s = 1; s < k; ++s) {
    for (int t = s + 1; t < k; ++t) {
      add(pair_name("zeta_overlap", s, t), inner(state.zeta(s), state.zeta(t)), 0.0);
    }
  }
  for (int j = 2; j <= k; ++j) {
    for (int s = 1; s < j; ++s) {
      const double target = (s <= j - 2)
                                 ? beta * order.gamma.at(s - 1) * (1.0 - q)
                                 : beta * (1.0 - q) * std::sqrt(order.residual_variance(j - 2));
      add(pair_name("zeta_m", s, j), inner(state.zeta(s), state.m(j)), target);
    }
  }

  const double residual = order.residual_variance(k - 1);
  const Vec gm = multiply(state.g_k, state.m(k));
  add("gm_norm2", inner(gm, gm), residual);
  double identity = inner(state.m(k), state.m(k));
  for (int s = 1; s < k; ++s) {
    const double c = inner(state.m(k), state.phi(s));
    identity -= c * c;
  }
  add("gm_identity", identity, residual);

  if (k >= 2) {
    const auto& hk = state.h_field(k);
    double sum = 0.0;
    for (double v : hk) {
      const double a = std::fabs(v);
      sum += a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
    }
    const double h = state.params.h;
    const double sq = std::sqrt(q);
    const double target = gauss_expect(
        [&](double x) {
          const double a = std::fabs(h + beta * sq * x);
          return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
        },
        state.params.quad_nodes);
    add("logcosh_h", sum / static_cast<double>(state.n), target);
  }
  return rec;
}

void write_stats_csv_header(std::ostream& out) { out << "seed,N,k,observable,value,target\n"; }

void write_stats_csv(std::ostream& out, const StatRecord& record) {
  for (const auto& row : record.rows) {
    out << record.seed << ',' << record.n << ',' << record.k << ',' << csv_field(row.observable)
        << ',' << format_double(row.value) << ',' << format_double(row.target) << '\n';
  }
}

CovReport zeta1_covariance_check(const std::vector<Vec>& zeta1, std::size_t max_indices) {
  const std::size_t r = zeta1.size();
  if (r < 50) {
    throw DomainError("zeta1_covariance_check: need at least 50 replicas (got " +
                      std::to_string(r) + ")");
  }
  const std::size_t n = zeta1.front().size();
  for (const auto& z : zeta1) {
    if (z.size() != n) throw DomainError("zeta1_covariance_check: replicas differ in N");
  }
  CovReport rep;
  rep.replicas = r;
  rep.n = n;
  const std::size_t m = std::min(n, max_indices);
  for (std::size_t i = 0; i < m; ++i) rep.indices.push_back(i);

  Vec mean(m, 0.0);
  for (const auto& z : zeta1) {
    for (std::size_t a = 0; a < m; ++a) mean[a] += z[rep.indices[a]];
  }
  for (double& v : mean) v /= static_cast<double>(r);
  rep.covariance = Matrix(m, m);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a; b < m; ++b) {
      double s = 0.0;
      for (const auto& z : zeta1) {
        s += (z[rep.indices[a]] - mean[a]) * (z[rep.indices[b]] - mean[b]);
      }
      s /= static_cast<double>(r - 1);
      rep.covariance(a, b) = s;
      rep.covariance(b, a) = s;
    }
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  rep.diag_bar = 4.0 * std::sqrt(2.0 / static_cast<double>(r));
  rep.offdiag_bar = 4.0 / std::sqrt(static_cast<double>(r));
  rep.symmetric = true;
  for (std::size_t a = 0; a < m; ++a) {
    rep.max_diag_rel_dev = std::max(
        rep.max_diag_rel_dev, std::fabs(rep.covariance(a, a) - (1.0 + inv_n)) / (1.0 + inv_n));
    for (std::size_t b = 0; b < m; ++b) {
      if (a == b) continue;
      rep.max_offdiag_abs_dev =
          std::max(rep.max_offdiag_abs_dev, std::fabs(rep.covariance(a, b) - inv_n));
      if (rep.covariance(a, b) != rep.covariance(b, a)) rep.symmetric = false;
    }
  }
  rep.pass = rep.symmetric && rep.max_diag_rel_dev <= rep.diag_bar &&
             rep.max_offdiag_abs_dev <= rep.offdiag_bar;
  return rep;
}

CovReport zeta1_covariance_check(const std::vector<RecursionState>& replicas,
                                 std::size_t max_indices) {
  std::vector<Vec> zeta1;
  zeta1.reserve(replicas.size());
  for (const auto& st : replicas) {
    if (st.zeta_list.empty()) {
      throw DomainError("zeta1_covariance_check: replica has not taken a step yet");
    }
    zeta1.push_back(st.zeta(1));
  }
  return zeta1_covariance_check(zeta1, max_indices);
}

}  // namespace sklab
