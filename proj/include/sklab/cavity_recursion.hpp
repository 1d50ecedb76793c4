#pragma once

// Recursive modification of the interaction matrix.
//
// Stage 1:  g(1) = g,  phi(1) = 1,  m(1) = sqrt(q) 1.
// Stage k -> k+1:
//   xi(k) = g(k) phi(k),  eta(k) = g(k)^T phi(k),  zeta(k) = (xi(k) + eta(k)) / sqrt(2)
//   h(k+1) = h 1 + beta sum_{s<k} gamma_s zeta(s) + beta sqrt(q - Gamma_{k-1}^2) zeta(k)
//   m(k+1) = tanh(h(k+1))
//   phi(k+1) = Gram-Schmidt of m(k+1) against phi(1..k), unit norm
//   g(k+1) = g(k) - [xi(k) (x) phi(k) + phi(k) (x) eta(k) - <phi(k), xi(k)> phi(k) (x) phi(k)]
//
// All stage indices in this interface are 1-based, as in the formulas above.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sklab/order_params.hpp"
#include "sklab/vectorspace.hpp"

namespace sklab {

inline constexpr double kDegeneracyThreshold = 1e-8;
inline constexpr double kOrthogonalityDrift = 1e-10;

struct RecursionState {
  int k = 0;            // current stage
  std::size_t n = 0;
  std::uint64_t seed = 0;
  Matrix g_k;           // g(k)
  std::vector<Vec> phi_list;    // phi(1..k)
  std::vector<Vec> xi_list;     // xi(1..k-1)
  std::vector<Vec> eta_list;    // eta(1..k-1)
  std::vector<Vec> zeta_list;   // zeta(1..k-1)
  std::vector<Vec> m_list;      // m(1..k)
  std::vector<Vec> h_list;      // h(1..k); h(1) = atanh(sqrt q) 1, never used downstream
  OrderParams order;
  ModelParams params;

  bool keep_transients = false;
  std::vector<Matrix> rho_list;  // rho(1..k-1), only with keep_transients
  int reorthogonalizations = 0;  // extra projection passes beyond the standard two

  const Vec& phi(int s) const { return phi_list.at(s - 1); }
  const Vec& xi(int s) const { return xi_list.at(s - 1); }
  const Vec& eta(int s) const { return eta_list.at(s - 1); }
  const Vec& zeta(int s) const { return zeta_list.at(s - 1); }
  const Vec& m(int s) const { return m_list.at(s - 1); }
  const Vec& h_field(int s) const { return h_list.at(s - 1); }
  const Matrix& rho(int s) const;
};

RecursionState init(const Disorder& disorder, const OrderParams& order,
                    const ModelParams& params, bool keep_transients = false);

// Advances the state in place from stage k to k+1.
void step(RecursionState& state);

// Value-returning variant.
RecursionState step(RecursionState&& state);

// Drives step until stage `stages`. With verify set, transients are kept and
// check_invariants runs after every stage.
RecursionState run(const Disorder& disorder, const OrderParams& order,
                   const ModelParams& params, int stages, bool verify = false);

// Cavity field h(k+1) from the stored zeta(1..k) only.
Vec cavity_field(const RecursionState& state, int k);

struct InvariantReport {
  double max_phi_overlap = 0.0;     // max_{i != j} |<phi(i), phi(j)>|
  double max_phi_norm_dev = 0.0;    // max_i | ||phi(i)|| - 1 |
  double max_annihilation = 0.0;    // max_{s<k} ||g(k) phi(s)|| + ||g(k)^T phi(s)||
  double max_xi_eta_asymmetry = 0.0;  // max_s |<phi(s), xi(s)> - <eta(s), phi(s)>|
  double max_zeta_mismatch = 0.0;   // max_s max_i |zeta_i - (xi_i + eta_i)/sqrt 2|
  bool m_inside_open_cube = true;
};

InvariantReport measure_invariants(const RecursionState& state);

// Throws NumericalError when an invariant exceeds its documented bound.
void check_invariants(const RecursionState& state);

struct Observation {
  std::string observable;
  double value = 0.0;
  double target = 0.0;
};

struct StatRecord {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  int k = 0;
  std::vector<Observation> rows;

  const Observation& find(const std::string& observable) const;
};

// Observable names (stage k = state.k):
//   m_overlap(i,j)  <m(i), m(j)>, j <= i <= k       target q (i == j) or rho_j
//   m_phi(k,j)      <m(k), phi(j)>, j < k           target gamma_j
//   phi_xi(s)       <phi(s), xi(s)>, s < k          target 0
//   zeta_norm2(s)   ||zeta(s)||^2                   target 1
//   zeta_overlap(s,t)  <zeta(s), zeta(t)>, s < t    target 0
//   zeta_m(s,j)     <zeta(s), m(j)>, s < j <= k     target beta gamma_s (1-q), s <= j-2,
//                                                   beta (1-q) sqrt(q - Gamma_{j-2}^2), s = j-1
//   gm_norm2        ||g(k) m(k)||^2                 target q - Gamma_{k-1}^2
//   gm_identity     ||m(k)||^2 - sum_{s<k} <m(k), phi(s)>^2, same target
//   logcosh_h       (1/N) sum log cosh h_i(k)       target E log cosh(h + beta sqrt(q) Z)
StatRecord state_stats(const RecursionState& state);

void write_stats_csv_header(std::ostream& out);
void write_stats_csv(std::ostream& out, const StatRecord& record);

struct CovReport {
  std::size_t replicas = 0;
  std::size_t n = 0;
  std::vector<std::size_t> indices;
  Matrix covariance;  // empirical, over `indices`
  double max_diag_rel_dev = 0.0;
  double max_offdiag_abs_dev = 0.0;
  double diag_bar = 0.0;     // 4 sqrt(2 / R)
  double offdiag_bar = 0.0;  // 4 / sqrt(R)
  bool symmetric = false;
  bool pass = false;
};

// Empirical covariance of zeta(1) across replicas against delta_ij + 1/N.
CovReport zeta1_covariance_check(const std::vector<RecursionState>& replicas,
                                 std::size_t max_indices = 16);

// Same check from the zeta(1) vectors alone (the replicas need not be kept).
CovReport zeta1_covariance_check(const std::vector<Vec>& zeta1, std::size_t max_indices = 16);

}  // namespace sklab
