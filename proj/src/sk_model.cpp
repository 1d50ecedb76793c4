#include "sklab/sk_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>

#include "sklab/error.hpp"

namespace sklab {

namespace {

constexpr std::uint64_t kResyncPeriod = 4096;

double log_cosh(double x) {
  const double a = std::fabs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

// Streaming log-sum-exp with a running maximum.
class LogSumExp {
 public:
  void add(double x) {
    if (x <= max_) {
      sum_ += std::exp(x - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - x) + 1.0;
      max_ = x;
    }
  }
  double value() const { return max_ + std::log(sum_); }

 private:
  double max_ = -std::numeric_limits<double>::infinity();
  double sum_ = 0.0;
};

void require_enumerable(std::size_t n, std::size_t limit, const char* op) {
  if (n > limit) {
    throw EnumerationLimitError(std::string(op) + ": N = " + std::to_string(n) +
                                " exceeds the exhaustive enumeration limit of " +
                                std::to_string(limit));
  }
}

// Tracks sum_{i,j} A_ij s_i s_j under single spin flips.
class QuadraticTracker {
 public:
  explicit QuadraticTracker(const Matrix& a) : sym_(a.rows(), a.cols()), u_(a.rows()) {
    const std::size_t n = a.rows();
    for (std::size_t i = 0; i < n; ++i) {
      diag_ += a(i, i);
      for (std::size_t j = 0; j < n; ++j) sym_(i, j) = (i == j) ? 0.0 : a(i, j) + a(j, i);
    }
  }

  void reset(const std::vector<int>& s) {
    const std::size_t n = s.size();
    double half = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = sym_.row(i);
      double u = 0.0;
      for (std::size_t j = 0; j < n; ++j) u += row[j] * s[j];
      u_[i] = u;
      half += s[i] * u;
    }
    value_ = diag_ + 0.5 * half;
  }

  void flip(std::size_t i, int old_spin) {
    value_ -= 2.0 * old_spin * u_[i];
    const auto row = sym_.row(i);
    const double f = 2.0 * old_spin;
    for (std::size_t j = 0; j < u_.size(); ++j) u_[j] -= f * row[j];
  }

  double value() const { return value_; }

 private:
  Matrix sym_;
  Vec u_;
  double diag_ = 0.0;
  double value_ = 0.0;
};

// Tracks (1/N) sum_i w_i s_i for a family of weight vectors.
class ProjectionTracker {
 public:
  explicit ProjectionTracker(std::vector<Vec> weights) : w_(std::move(weights)), v_(w_.size()) {}

  void reset(const std::vector<int>& s) {
    for (std::size_t r = 0; r < w_.size(); ++r) {
      double acc = 0.0;
      for (std::size_t i = 0; i < s.size(); ++i) acc += w_[r][i] * s[i];
      v_[r] = acc / static_cast<double>(s.size());
    }
  }

  void flip(std::size_t i, int old_spin, std::size_t n) {
    const double f = 2.0 * old_spin / static_cast<double>(n);
    for (std::size_t r = 0; r < w_.size(); ++r) v_[r] -= f * w_[r][i];
  }

  double operator[](std::size_t r) const { return v_[r]; }
  std::size_t size() const { return v_.size(); }

 private:
  std::vector<Vec> w_;
  Vec v_;
};

// Visits all 2^n configurations in Gray-code order, starting from all +1.
// visit(bits, spins); on_flip(i, old_spin); resync(spins) runs periodically so
// that incremental updates do not accumulate rounding error.
template <class Visit, class OnFlip, class Resync>
void gray_walk(std::size_t n, Visit&& visit, OnFlip&& on_flip, Resync&& resync) {
  std::vector<int> spins(n, 1);
  std::uint64_t bits = 0;
  resync(spins);
  visit(bits, spins);
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t t = 1; t < total; ++t) {
    const auto i = static_cast<std::size_t>(std::countr_zero(t));
    const int old = spins[i];
    spins[i] = -old;
    bits ^= std::uint64_t{1} << i;
    on_flip(i, old);
    if (t % kResyncPeriod == 0) resync(spins);
    visit(bits, spins);
  }
}

Matrix accumulated_rho(const RecursionState& state, const Disorder& d) {
  if (d.n != state.n) throw DomainError("disorder and recursion state differ in N");
  Matrix diff(d.n, d.n);
  const auto g = d.g.data();
  const auto gk = state.g_k.data();
  auto out = diff.data();
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = g[e] - gk[e];
  return diff;
}

// Single-replica exponent h sum sigma + (beta/sqrt2) sigma^T (g - g(k+1)) sigma
// + (beta^2 N/4)(1 - sum_r <phi(r),sigma>^2)^2, and the projections <phi(r),sigma>,
// for every configuration indexed by its bit pattern.
void single_replica_terms(const RecursionState& state, const Disorder& d, Vec& exponent,
                          std::vector<double>& projections) {
  const std::size_t n = state.n;
  const int k = conditioning_level(state);
  const double beta = state.params.beta;
  const double h = state.params.h;
  const double coupling = beta / std::numbers::sqrt2;
  const double variance_coeff = beta * beta * static_cast<double>(n) / 4.0;

  QuadraticTracker quad(accumulated_rho(state, d));
  std::vector<Vec> phis(state.phi_list.begin(), state.phi_list.begin() + k);
  ProjectionTracker proj(phis);
  double magnet = static_cast<double>(n);

  const std::uint64_t total = std::uint64_t{1} << n;
  exponent.assign(total, 0.0);
  projections.assign(total * static_cast<std::size_t>(k), 0.0);

  gray_walk(
      n,
      [&](std::uint64_t bits, const std::vector<int>&) {
        double s2 = 0.0;
        for (int r = 0; r < k; ++r) {
          s2 += proj[r] * proj[r];
          projections[bits * k + r] = proj[r];
        }
        const double rest = 1.0 - s2;
        exponent[bits] = h * magnet + coupling * quad.value() + variance_coeff * rest * rest;
      },
      [&](std::size_t i, int old) {
        quad.flip(i, old);
        proj.flip(i, old, n);
        magnet -= 2.0 * old;
      },
      [&](const std::vector<int>& s) {
        quad.reset(s);
        proj.reset(s);
        magnet = 0.0;
        for (int v : s) magnet += v;
      });
}

}  // namespace

SpinConfig::SpinConfig(std::vector<signed char> spins) : spins_(std::move(spins)) {
  for (auto s : spins_) {
    if (s != 1 && s != -1) throw DomainError("SpinConfig: entries must be +1 or -1");
  }
}

SpinConfig SpinConfig::from_bits(std::uint64_t bits, std::size_t n) {
  std::vector<signed char> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = ((bits >> i) & 1u) ? -1 : 1;
  return SpinConfig(std::move(s));
}

Vec SpinConfig::as_vec() const { return Vec(spins_.begin(), spins_.end()); }

double hamiltonian(const SpinConfig& sigma, const Disorder& d, const ModelParams& params) {
  if (sigma.size() != d.n) throw DomainError("hamiltonian: spin configuration length mismatch");
  double quad = 0.0;
  double field = 0.0;
  for (std::size_t i = 0; i < d.n; ++i) {
    const auto row = d.g.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < d.n; ++j) s += row[j] * sigma[j];
    quad += sigma[i] * s;
    field += sigma[i];
  }
  return params.beta / std::numbers::sqrt2 * quad + params.h * field;
}

double log_partition_exact(const Disorder& d, const ModelParams& params) {
  params.validate();
  require_enumerable(d.n, kMaxQuenchedN, "log_partition_exact");
  const std::size_t n = d.n;
  const double coupling = params.beta / std::numbers::sqrt2;
  QuadraticTracker quad(d.g);
  double magnet = 0.0;
  LogSumExp lse;
  gray_walk(
      n,
      [&](std::uint64_t, const std::vector<int>&) {
        lse.add(coupling * quad.value() + params.h * magnet);
      },
      [&](std::size_t i, int old) {
        quad.flip(i, old);
        magnet -= 2.0 * old;
      },
      [&](const std::vector<int>& s) {
        quad.reset(s);
        magnet = 0.0;
        for (int v : s) magnet += v;
      });
  return lse.value() - static_cast<double>(n) * std::numbers::ln2;
}

Vec gibbs_magnetizations(const Disorder& d, const ModelParams& params) {
  params.validate();
  require_enumerable(d.n, kMaxQuenchedN, "gibbs_magnetizations");
  const std::size_t n = d.n;
  const double coupling = params.beta / std::numbers::sqrt2;
  QuadraticTracker quad(d.g);
  double magnet = 0.0;
  double top = -std::numeric_limits<double>::infinity();
  double mass = 0.0;
  Vec acc(n, 0.0);
  gray_walk(
      n,
      [&](std::uint64_t, const std::vector<int>& s) {
        const double x = coupling * quad.value() + params.h * magnet;
        if (x > top) {
          const double scale = std::exp(top - x);
          mass *= scale;
          for (double& a : acc) a *= scale;
          top = x;
        }
        const double w = std::exp(x - top);
        mass += w;
        for (std::size_t i = 0; i < n; ++i) acc[i] += w * s[i];
      },
      [&](std::size_t i, int old) {
        quad.flip(i, old);
        magnet -= 2.0 * old;
      },
      [&](const std::vector<int>& s) {
        quad.reset(s);
        magnet = 0.0;
        for (int v : s) magnet += v;
      });
  for (double& a : acc) a /= mass;
  return acc;
}

TiltedMeasure TiltedMeasure::from_field(Vec field) {
  TiltedMeasure t;
  t.m_mean.resize(field.size());
  t.log_norm = -static_cast<double>(field.size()) * std::numbers::ln2;
  for (std::size_t i = 0; i < field.size(); ++i) {
    t.m_mean[i] = std::tanh(field[i]);
    t.log_norm += log_cosh(field[i]);
  }
  t.h_field = std::move(field);
  return t;
}

double TiltedMeasure::log_prob(const SpinConfig& sigma) const {
  if (sigma.size() != h_field.size()) throw DomainError("TiltedMeasure: length mismatch");
  double x = 0.0;
  for (std::size_t i = 0; i < h_field.size(); ++i) x += h_field[i] * sigma[i];
  return x - log_norm - 2.0 * static_cast<double>(h_field.size()) * std::numbers::ln2;
}

double TiltedMeasure::total_mass() const {
  require_enumerable(h_field.size(), kMaxQuenchedN, "TiltedMeasure::total_mass");
  LogSumExp lse;
  const std::uint64_t total = std::uint64_t{1} << h_field.size();
  for (std::uint64_t b = 0; b < total; ++b) lse.add(log_prob(SpinConfig::from_bits(b, h_field.size())));
  return std::exp(lse.value());
}

Vec tilt_field(const RecursionState& state) {
  const int k = conditioning_level(state);
  if (k == 0) return Vec(state.n, state.params.h);
  return state.h_field(k + 1);
}

double f_nk(const SpinConfig& sigma, const RecursionState& state) {
  if (sigma.size() != state.n) throw DomainError("f_nk: length mismatch");
  const int k = conditioning_level(state);
  const Vec s = sigma.as_vec();
  const auto& order = state.order;
  double value = 0.0;
  double proj_sq = 0.0;
  for (int r = 1; r <= k; ++r) {
    const double p = inner(state.phi(r), s);
    proj_sq += p * p;
    const double rho_form = inner(state.xi(r), s) * p + p * inner(state.eta(r), s) -
                            inner(state.phi(r), state.xi(r)) * p * p;
    value += rho_form / std::numbers::sqrt2;
  }
  for (int r = 1; r < k; ++r) value -= order.gamma.at(r - 1) * inner(state.zeta(r), s);
  if (k >= 1) value -= std::sqrt(order.residual_variance(k - 1)) * inner(state.zeta(k), s);
  const double rest = 1.0 - proj_sq;
  value += state.params.beta / 4.0 * rest * rest;
  return value;
}

double conditional_first_moment(const RecursionState& state, const Disorder& d) {
  require_enumerable(state.n, kMaxQuenchedN, "conditional_first_moment");
  Vec exponent;
  std::vector<double> projections;
  single_replica_terms(state, d, exponent, projections);
  LogSumExp lse;
  for (double x : exponent) lse.add(x);
  const double n = static_cast<double>(state.n);
  return (lse.value() - n * std::numbers::ln2) / n;
}

double conditional_first_moment_factored(const RecursionState& state) {
  require_enumerable(state.n, kMaxQuenchedN, "conditional_first_moment_factored");
  const auto tilt = TiltedMeasure::from_field(tilt_field(state));
  const double n = static_cast<double>(state.n);
  const double beta = state.params.beta;
  LogSumExp lse;
  const std::uint64_t total = std::uint64_t{1} << state.n;
  for (std::uint64_t b = 0; b < total; ++b) {
    const auto sigma = SpinConfig::from_bits(b, state.n);
    lse.add(tilt.log_prob(sigma) + n * beta * f_nk(sigma, state));
  }
  double sum_log_cosh = 0.0;
  for (double v : tilt.h_field) sum_log_cosh += log_cosh(v);
  return (sum_log_cosh + lse.value()) / n;
}

double conditional_second_moment(const RecursionState& state, const Disorder& d) {
  require_enumerable(state.n, kMaxPairN, "conditional_second_moment");
  const std::size_t n = state.n;
  const int k = conditioning_level(state);
  const double nd = static_cast<double>(n);
  const double cross_coeff = state.params.beta * state.params.beta * nd / 2.0;

  Vec exponent;
  std::vector<double> proj;
  single_replica_terms(state, d, exponent, proj);
  const double top = *std::max_element(exponent.begin(), exponent.end());
  const std::uint64_t total = std::uint64_t{1} << n;

  // |<sigma,tau> - sum_r <sigma,phi(r)><tau,phi(r)>| <= 1, so the shift below
  // bounds every inner exponent from above.
  LogSumExp outer;
  for (std::uint64_t a = 0; a < total; ++a) {
    const double shift = exponent[a] + top + cross_coeff;
    const double* pa = proj.data() + a * k;
    double sum = 0.0;
    for (std::uint64_t b = 0; b < total; ++b) {
      const double* pb = proj.data() + b * k;
      double c = (nd - 2.0 * std::popcount(a ^ b)) / nd;
      for (int r = 0; r < k; ++r) c -= pa[r] * pb[r];
      sum += std::exp(exponent[a] + exponent[b] + cross_coeff * c * c - shift);
    }
    outer.add(shift + std::log(sum));
  }
  return (outer.value() - 2.0 * nd * std::numbers::ln2) / nd;
}

double chi_gap(double x, double h_i) {
  return log_cosh(h_i + x) - log_cosh(h_i) - x * std::tanh(h_i);
}

std::vector<Vec> tap_trajectory(const Disorder& d, const OrderParams& order,
                                const ModelParams& params, int iters) {
  params.validate();
  if (iters < 1) throw DomainError("tap_iterate: iters must be >= 1");
  const Matrix gbar = symmetrize(d.g);
  const double beta = params.beta;
  const double onsager = beta * (1.0 - order.q);
  Vec prev(d.n, 0.0);
  std::vector<Vec> out;
  out.emplace_back(d.n, std::sqrt(order.q));
  for (int t = 0; t < iters; ++t) {
    const Vec& cur = out.back();
    const Vec field = multiply(gbar, cur);
    Vec next(d.n);
    for (std::size_t i = 0; i < d.n; ++i) {
      next[i] = std::tanh(params.h + beta * (field[i] - onsager * prev[i]));
    }
    prev = cur;
    out.push_back(std::move(next));
  }
  return out;
}

Vec tap_iterate(const Disorder& d, const OrderParams& order, const ModelParams& params, int iters) {
  return tap_trajectory(d, order, params, iters).back();
}

}  // namespace sklab
