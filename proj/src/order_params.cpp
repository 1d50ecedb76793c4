#include "sklab/order_params.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>

#include "sklab/error.hpp"

namespace sklab {

namespace {

constexpr int kMaxFixedPointIterations = 500;
constexpr double kDamping = 0.5;

real_ld log_cosh(real_ld x) {
  const real_ld a = std::fabs(x);
  return a + std::log1p(std::exp(-2.0L * a)) - std::log(2.0L);
}

// Orthonormal probabilists' Hermite polynomials p_0..p_n at x. Returns p_n,
// sets p_{n-1} and accumulates sum_{k<n} p_k^2.
real_ld hermite_orthonormal(int n, real_ld x, real_ld& prev, real_ld& sum_sq) {
  real_ld p_prev = 0.0L;
  real_ld p = 1.0L;
  sum_sq = 0.0L;
  for (int k = 0; k < n; ++k) {
    sum_sq += p * p;
    const real_ld next = (x * p - std::sqrt(static_cast<real_ld>(k)) * p_prev) /
                         std::sqrt(static_cast<real_ld>(k + 1));
    p_prev = p;
    p = next;
  }
  prev = p_prev;
  return p;
}

GaussHermiteRule compute_rule(int n) {
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  if (n == 1) {
    rule.nodes[0] = 0.0L;
    rule.weights[0] = 1.0L;
    return rule;
  }

  // Golub-Welsch in double for starting values, then Newton in long double.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(n - 1);
  for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  std::vector<double> start(solver.eigenvalues().data(),
                            solver.eigenvalues().data() + n);
  std::sort(start.begin(), start.end());

  for (int i = 0; i < n; ++i) {
    real_ld x = start[i];
    for (int it = 0; it < 8; ++it) {
      real_ld prev = 0.0L;
      real_ld sum_sq = 0.0L;
      const real_ld p = hermite_orthonormal(n, x, prev, sum_sq);
      const real_ld dp = std::sqrt(static_cast<real_ld>(n)) * prev;
      const real_ld dx = p / dp;
      x -= dx;
      if (std::fabs(dx) <= 4.0L * std::numeric_limits<real_ld>::epsilon() *
                                std::max(1.0L, std::fabs(x))) {
        break;
      }
    }
    rule.nodes[i] = x;
  }
  // Exact symmetry keeps odd moments at zero.
  for (int i = 0; i < n / 2; ++i) {
    const real_ld x = 0.5L * (rule.nodes[n - 1 - i] - rule.nodes[i]);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0L;

  real_ld total = 0.0L;
  for (int i = 0; i < n; ++i) {
    real_ld prev = 0.0L;
    real_ld sum_sq = 0.0L;
    hermite_orthonormal(n, rule.nodes[i], prev, sum_sq);
    rule.weights[i] = 1.0L / sum_sq;
    total += rule.weights[i];
  }
  for (auto& w : rule.weights) w /= total;
  return rule;
}

// Maximizes a unimodal function on [a, b].
template <class F>
real_ld golden_max(F&& f, real_ld a, real_ld b, real_ld tol, real_ld& best) {
  const real_ld inv_phi = (std::sqrt(5.0L) - 1.0L) / 2.0L;
  real_ld c = b - inv_phi * (b - a);
  real_ld d = a + inv_phi * (b - a);
  real_ld fc = f(c);
  real_ld fd = f(d);
  for (int it = 0; it < 400 && (b - a) > tol; ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  if (fc >= fd) {
    best = fc;
    return c;
  }
  best = fd;
  return d;
}

real_ld tanh_sq_map(real_ld q, const ModelParams& params) {
  const real_ld beta = params.beta;
  const real_ld h = params.h;
  const real_ld s = std::sqrt(std::max(q, 0.0L));
  return gauss_expect_ld(
      [&](real_ld x) {
        const real_ld t = std::tanh(h + beta * s * x);
        return t * t;
      },
      params.quad_nodes);
}

}  // namespace

void ModelParams::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw DomainError("beta must be finite and >= 0");
  }
  if (!std::isfinite(h)) throw DomainError("h must be finite");
  if (quad_nodes < 21) throw DomainError("quad_nodes must be >= 21");
  if (!(tol > 0.0)) throw DomainError("tol must be > 0");
}

double OrderParams::residual_variance(std::size_t k) const {
  if (k == 0) return q;
  if (k > gamma_sq_gap.size()) {
    throw DomainError("residual_variance: stage " + std::to_string(k) +
                      " beyond computed sequence of length " +
                      std::to_string(gamma_sq_gap.size()));
  }
  return gamma_sq_gap[k - 1];
}

const GaussHermiteRule& gauss_hermite(int nodes) {
  if (nodes < 1) throw DomainError("gauss_hermite: nodes must be >= 1");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[nodes];
  if (!slot) slot = std::make_unique<GaussHermiteRule>(compute_rule(nodes));
  return *slot;
}

real_ld gauss_expect_ld(const std::function<real_ld(real_ld)>& f, int nodes) {
  const auto& rule = gauss_hermite(nodes);
  real_ld sum = 0.0L;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const real_ld v = f(rule.nodes[i]);
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "gauss_expect: non-finite integrand at node " << i << " (x = "
          << static_cast<double>(rule.nodes[i]) << ")";
      throw NumericalError(msg.str());
    }
    sum += rule.weights[i] * v;
  }
  return sum;
}

double gauss_expect(const std::function<double(double)>& f, int nodes) {
  return static_cast<double>(gauss_expect_ld(
      [&](real_ld x) { return static_cast<real_ld>(f(static_cast<double>(x))); },
      nodes));
}

real_ld solve_q_ld(const ModelParams& params) {
  params.validate();
  if (params.h == 0.0) {
    throw DomainError("solve_q: h must be nonzero (the fixed point is not unique at h = 0)");
  }
  const real_ld tol = params.tol;
  real_ld q = std::tanh(static_cast<real_ld>(params.h));
  q *= q;
  real_ld residual = tanh_sq_map(q, params) - q;

  int it = 0;
  for (; it < kMaxFixedPointIterations && std::fabs(residual) >= tol; ++it) {
    q += kDamping * residual;
    residual = tanh_sq_map(q, params) - q;
  }
  if (std::fabs(residual) < tol) {
    // Polish to the precision of the arithmetic while the residual shrinks.
    for (int extra = 0; extra < 200; ++extra) {
      const real_ld next = q + kDamping * residual;
      const real_ld next_residual = tanh_sq_map(next, params) - next;
      if (!(std::fabs(next_residual) < std::fabs(residual))) break;
      q = next;
      residual = next_residual;
    }
    return q;
  }

  // Bisection on the residual; r(0) > 0 > r(1) for h != 0.
  real_ld lo = 0.0L;
  real_ld hi = 1.0L;
  for (int b = 0; b < 200; ++b) {
    const real_ld mid = 0.5L * (lo + hi);
    const real_ld r = tanh_sq_map(mid, params) - mid;
    if (r > 0.0L) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  q = 0.5L * (lo + hi);
  residual = tanh_sq_map(q, params) - q;
  if (std::fabs(residual) >= tol) {
    std::ostringstream msg;
    msg << "solve_q: no convergence (last iterate " << static_cast<double>(q)
        << ", residual " << static_cast<double>(residual) << ")";
    throw NumericalError(msg.str());
  }
  return q;
}

double solve_q(const ModelParams& params) {
  return static_cast<double>(solve_q_ld(params));
}

real_ld psi_ld(real_ld t, real_ld q, const ModelParams& params) {
  const real_ld slack = 64.0L * std::numeric_limits<real_ld>::epsilon() * std::max(q, 1.0L);
  if (!(t >= -slack && t <= q + slack)) {
    std::ostringstream msg;
    msg << "psi: t = " << static_cast<double>(t) << " outside [0, q = "
        << static_cast<double>(q) << "]";
    throw DomainError(msg.str());
  }
  t = std::clamp(t, 0.0L, q);
  const auto& rule = gauss_hermite(params.quad_nodes);
  const real_ld beta = params.beta;
  const real_ld h = params.h;
  const real_ld shared = std::sqrt(t);
  const real_ld own = std::sqrt(q - t);
  real_ld outer = 0.0L;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    real_ld inner = 0.0L;
    for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
      inner += rule.weights[j] *
               std::tanh(h + beta * (shared * rule.nodes[i] + own * rule.nodes[j]));
    }
    outer += rule.weights[i] * inner * inner;
  }
  return outer;
}

double psi(double t, const OrderParams& order, const ModelParams& params) {
  params.validate();
  return static_cast<double>(psi_ld(t, order.q, params));
}

OrderParams build_sequences(const ModelParams& params, int stages) {
  if (stages < 1) throw DomainError("build_sequences: need at least one stage");
  // At beta = 0 every m(k) equals sqrt(q) 1, so gamma_1^2 = q and nothing follows.
  if (params.beta == 0.0 && stages > 1) {
    throw DomainError("build_sequences: beta = 0 admits a single stage only");
  }
  const real_ld q = solve_q_ld(params);
  const real_ld beta = params.beta;
  const real_ld h = params.h;
  const real_ld sqrt_q = std::sqrt(q);

  OrderParams out;
  out.q = static_cast<double>(q);

  const real_ld gamma1 = gauss_expect_ld(
      [&](real_ld x) { return std::tanh(h + beta * sqrt_q * x); }, params.quad_nodes);
  real_ld rho = sqrt_q * gamma1;
  real_ld gamma = gamma1;
  real_ld gamma_sq = 0.0L;  // Gamma_{k-1}^2
  real_ld residual = q;     // q - Gamma_{k-1}^2

  for (int k = 1; k <= stages; ++k) {
    if (k > 1) {
      if (!(residual > 0.0L)) {
        std::ostringstream msg;
        msg << "build_sequences: q - Gamma_" << (k - 1) << "^2 = "
            << static_cast<double>(residual)
            << " is not positive; the sequence has exhausted the working precision";
        throw NumericalError(msg.str());
      }
      rho = psi_ld(rho, q, params);
      gamma = (rho - gamma_sq) / std::sqrt(residual);
    }
    out.rho.push_back(static_cast<double>(rho));
    out.gamma.push_back(static_cast<double>(gamma));
    out.rho_gap.push_back(static_cast<double>(q - rho));
    gamma_sq += gamma * gamma;
    residual -= gamma * gamma;
    out.gamma_sq_partial.push_back(static_cast<double>(gamma_sq));
    out.gamma_sq_gap.push_back(static_cast<double>(residual));
  }
  out.at_value = at_value(params, out.q);
  return out;
}

double at_value(const ModelParams& params, double q) {
  params.validate();
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("at_value: q must lie in [0, 1]");
  const real_ld beta = params.beta;
  const real_ld h = params.h;
  const real_ld s = std::sqrt(static_cast<real_ld>(q));
  const real_ld mean = gauss_expect_ld(
      [&](real_ld x) {
        const real_ld c = std::cosh(h + beta * s * x);
        return 1.0L / (c * c * c * c);
      },
      params.quad_nodes);
  return static_cast<double>(beta * beta * mean);
}

double rs_bracket(const ModelParams& params, double q) {
  const real_ld beta = params.beta;
  const real_ld h = params.h;
  const real_ld s = std::sqrt(static_cast<real_ld>(std::max(q, 0.0)));
  const real_ld first = gauss_expect_ld(
      [&](real_ld x) { return log_cosh(h + beta * s * x); }, params.quad_nodes);
  const real_ld one_minus = 1.0L - static_cast<real_ld>(q);
  return static_cast<double>(first + beta * beta * one_minus * one_minus / 4.0L);
}

double rs_free_energy(const ModelParams& params) {
  params.validate();
  constexpr int kGrid = 1001;
  std::vector<double> grid(kGrid);
  for (int i = 0; i < kGrid; ++i) {
    grid[i] = rs_bracket(params, static_cast<double>(i) / (kGrid - 1));
  }
  const auto best = std::min_element(grid.begin(), grid.end());

  if (params.h != 0.0) {
    const double q = solve_q(params);
    const double value = rs_bracket(params, q);
    if (*best < value - 1e-9) {
      std::ostringstream msg;
      msg << "rs_free_energy: grid point q = "
          << static_cast<double>(best - grid.begin()) / (kGrid - 1) << " gives "
          << *best << " below the stationary value " << value << " at q = " << q;
      throw NumericalError(msg.str());
    }
    return value;
  }

  // h = 0: the minimizer is 0 for beta <= 1 and positive otherwise; refine
  // the best grid cell directly.
  const int i = static_cast<int>(best - grid.begin());
  const real_ld a = static_cast<real_ld>(std::max(i - 1, 0)) / (kGrid - 1);
  const real_ld b = static_cast<real_ld>(std::min(i + 1, kGrid - 1)) / (kGrid - 1);
  real_ld refined = 0.0L;
  golden_max([&](real_ld q) { return -static_cast<real_ld>(rs_bracket(params, static_cast<double>(q))); },
             a, b, 1e-14L, refined);
  return std::min({*best, static_cast<double>(-refined), grid.front()});
}

double toy_rate_function(double x, double m) {
  if (!(m > -1.0 && m < 1.0)) throw DomainError("toy model: m must lie in (-1, 1)");
  const real_ld mm = m;
  const real_ld values[3] = {(1 - mm) * (1 - mm), (1 + mm) * (1 + mm), -(1 - mm * mm)};
  const real_ld probs[3] = {(1 + mm) * (1 + mm) / 4, (1 - mm) * (1 - mm) / 4,
                            (1 - mm * mm) / 2};
  const real_ld xx = x;
  if (xx < values[2] || xx > values[1]) return std::numeric_limits<double>::infinity();

  auto objective = [&](real_ld lambda) {
    real_ld top = -std::numeric_limits<real_ld>::infinity();
    for (int s = 0; s < 3; ++s) top = std::max(top, lambda * values[s]);
    real_ld sum = 0.0L;
    for (int s = 0; s < 3; ++s) sum += probs[s] * std::exp(lambda * values[s] - top);
    return lambda * xx - (top + std::log(sum));
  };
  real_ld best = 0.0L;
  golden_max(objective, -50.0L, 50.0L, 1e-12L, best);
  if (!std::isfinite(best)) {
    throw NumericalError("toy_rate_function: Legendre transform did not converge");
  }
  // lambda = 0 gives 0, so the rate function is never negative.
  return static_cast<double>(std::max(best, 0.0L));
}

double toy_exponent(double beta, double m) {
  if (!(beta >= 0.0)) throw DomainError("toy_exponent: beta must be >= 0");
  if (!(m > -1.0 && m < 1.0)) throw DomainError("toy_exponent: m must lie in (-1, 1)");
  const real_ld lo = -(1.0L - static_cast<real_ld>(m) * m);
  const real_ld hi = (1.0L + static_cast<real_ld>(m)) * (1.0L + m);
  const real_ld b2 = static_cast<real_ld>(beta) * beta;
  auto objective = [&](real_ld x) {
    return b2 * x * x / 2.0L - static_cast<real_ld>(toy_rate_function(static_cast<double>(x), m));
  };

  // The objective is typically bimodal (a local maximum at 0 and one near the
  // upper end of the support), so a grid scan picks the basin first.
  constexpr int kGrid = 2001;
  real_ld best = objective(0.0L);
  int best_i = -1;
  for (int i = 0; i < kGrid; ++i) {
    const real_ld x = lo + (hi - lo) * static_cast<real_ld>(i) / (kGrid - 1);
    const real_ld v = objective(x);
    if (v > best) {
      best = v;
      best_i = i;
    }
  }
  if (best_i >= 0) {
    const real_ld step = (hi - lo) / (kGrid - 1);
    const real_ld a = std::max(lo, lo + step * (best_i - 1));
    const real_ld b = std::min(hi, lo + step * (best_i + 1));
    real_ld refined = 0.0L;
    golden_max(objective, a, b, 1e-12L, refined);
    best = std::max(best, refined);
  }
  if (!std::isfinite(best)) throw NumericalError("toy_exponent: optimization failed");
  return static_cast<double>(std::max(best, 0.0L));
}

}  // namespace sklab
