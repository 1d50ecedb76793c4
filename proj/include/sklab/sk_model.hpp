#pragma once

// Exact small-N thermodynamics by exhaustive enumeration.
//
// H(sigma) = beta/sqrt(2) sum_{i,j} g_ij sigma_i sigma_j + h sum_i sigma_i, the
// double sum running over all i, j including the diagonal (which only shifts
// H by a sigma independent constant). Z_N = 2^{-N} sum_sigma exp H(sigma).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sklab/cavity_recursion.hpp"
#include "sklab/order_params.hpp"
#include "sklab/vectorspace.hpp"

namespace sklab {

inline constexpr std::size_t kMaxQuenchedN = 24;
inline constexpr std::size_t kMaxPairN = 13;

class SpinConfig {
 public:
  SpinConfig() = default;
  explicit SpinConfig(std::vector<signed char> spins);

  // Bit i of `bits` set means sigma_i = -1.
  static SpinConfig from_bits(std::uint64_t bits, std::size_t n);

  std::size_t size() const { return spins_.size(); }
  int operator[](std::size_t i) const { return spins_[i]; }
  void flip(std::size_t i) { spins_[i] = static_cast<signed char>(-spins_[i]); }
  Vec as_vec() const;

 private:
  std::vector<signed char> spins_;
};

double hamiltonian(const SpinConfig& sigma, const Disorder& d, const ModelParams& params);

// log Z_N (not divided by N).
double log_partition_exact(const Disorder& d, const ModelParams& params);

// Gibbs means <sigma_i>.
Vec gibbs_magnetizations(const Disorder& d, const ModelParams& params);

// Product measure p(sigma) = 2^{-N} exp(sum_i h_i sigma_i) / prod_i cosh h_i.
struct TiltedMeasure {
  Vec h_field;
  Vec m_mean;
  double log_norm = 0.0;  // sum_i log cosh h_i - N log 2

  static TiltedMeasure from_field(Vec field);
  double log_prob(const SpinConfig& sigma) const;
  // Total mass by enumeration (N <= 24).
  double total_mass() const;
};

// Conditioning level of a state at stage k + 1 is k.
inline int conditioning_level(const RecursionState& state) { return state.k - 1; }

// (1/N) log E_k(Z_N) by enumerating
//   2^{-N} sum_sigma exp[h sum sigma + (beta N / sqrt 2) <(g - g(k+1)) sigma, sigma>
//                        + (beta^2 N / 4)(1 - sum_{r<=k} <phi(r), sigma>^2)^2].
// The quadratic form uses the matrix g - g(k+1) = sum_s rho(s) directly.
double conditional_first_moment(const RecursionState& state, const Disorder& d);

// The same quantity through the factorization
//   E_k(Z_N) = exp[sum_i log cosh h_i(k+1)] sum_sigma p(sigma) exp[N beta F_{N,k}(sigma)],
// with F evaluated from the stored vectors (f_nk). Used as an independent route.
double conditional_first_moment_factored(const RecursionState& state);

// (1/N) log E_k(Z_N^2) by pair enumeration. The cross term of the two
// replicas enters as (beta^2 N / 2) [<sigma,tau> - sum_r <sigma,phi(r)><tau,phi(r)>]^2.
double conditional_second_moment(const RecursionState& state, const Disorder& d);

// F_{N,k}(sigma) at conditioning level k = state.k - 1. <rho(s) sigma, sigma>
// is reconstructed from xi(s), eta(s), phi(s).
double f_nk(const SpinConfig& sigma, const RecursionState& state);

// The tilting field h(k+1) of level k (h 1 at level 0).
Vec tilt_field(const RecursionState& state);

// chi(x) = log cosh(h_i + x) - log cosh(h_i) - x tanh(h_i) <= x^2 / 2.
double chi_gap(double x, double h_i);

// Plain TAP iteration m(k+1) = Th(gbar m(k) - beta (1-q) m(k-1)), started from
// m(0) = 0, m(1) = sqrt(q) 1; returns m(1 + iters).
Vec tap_iterate(const Disorder& d, const OrderParams& order, const ModelParams& params, int iters);

// Same, returning every iterate m(1) .. m(1 + iters).
std::vector<Vec> tap_trajectory(const Disorder& d, const OrderParams& order,
                                const ModelParams& params, int iters);

}  // namespace sklab
