#pragma once

// Scalar (size independent) quantities of the high temperature SK model:
// Gaussian expectations, the overlap fixed point q, the sequences gamma_k and
// rho_k, the de Almeida-Thouless value, the replica symmetric free energy and
// the second-moment exponent of the centered toy model.
//
// All internal arithmetic is carried out in long double. The sequences
// converge to q geometrically, with q - rho_k reaching 1e-16 after a dozen
// stages at moderate beta, which double precision cannot resolve.

#include <cstddef>
#include <functional>
#include <vector>

namespace sklab {

using real_ld = long double;

struct ModelParams {
  double beta = 0.2;
  double h = 0.5;
  int quad_nodes = 61;
  double tol = 1e-13;

  // Throws DomainError unless beta >= 0, quad_nodes >= 21 and tol > 0.
  // beta == 0 is accepted: it is the degenerate calibration point used
  // throughout the test-suite.
  void validate() const;
};

struct OrderParams {
  double q = 0.0;
  std::vector<double> gamma;             // gamma_1 .. gamma_K
  std::vector<double> rho;               // rho_1 .. rho_K
  std::vector<double> gamma_sq_partial;  // Gamma_k^2 = sum_{j<=k} gamma_j^2
  double at_value = 0.0;

  // Tails carried in extended precision, then rounded: rho_gap[k-1] = q - rho_k
  // and gamma_sq_gap[k-1] = q - Gamma_k^2. They keep the ordering of the
  // sequences observable after rho_k and Gamma_k^2 agree with q to all
  // digits of a double.
  std::vector<double> rho_gap;
  std::vector<double> gamma_sq_gap;

  std::size_t stages() const { return gamma.size(); }

  // q - Gamma_{k}^2 for k >= 0 (k = 0 gives q). Throws DomainError when k is
  // beyond the computed sequence.
  double residual_variance(std::size_t k) const;
};

// Probabilists' Gauss-Hermite rule: nodes x_i and weights w_i with
// sum_i w_i f(x_i) ~ E f(Z), Z standard Gaussian. Weights sum to one.
struct GaussHermiteRule {
  std::vector<real_ld> nodes;
  std::vector<real_ld> weights;
};

// Cached per node count; safe to call from several threads.
const GaussHermiteRule& gauss_hermite(int nodes);

// E f(Z) by Gauss-Hermite quadrature. Throws NumericalError naming the node
// if f is not finite there.
double gauss_expect(const std::function<double(double)>& f, int nodes);
real_ld gauss_expect_ld(const std::function<real_ld(real_ld)>& f, int nodes);

// Fixed point q = E tanh^2(h + beta sqrt(q) Z). Requires h != 0.
double solve_q(const ModelParams& params);
real_ld solve_q_ld(const ModelParams& params);

// psi(t) = E Th(sqrt(t) Z + sqrt(q-t) Z') Th(sqrt(t) Z + sqrt(q-t) Z''),
// evaluated as E_Z[(E_Z' Th(...))^2]. Requires 0 <= t <= q.
double psi(double t, const OrderParams& order, const ModelParams& params);
real_ld psi_ld(real_ld t, real_ld q, const ModelParams& params);

// Throws DomainError for beta = 0 with more than one stage (gamma_1^2 = q).
OrderParams build_sequences(const ModelParams& params, int stages);

// beta^2 E cosh^{-4}(h + beta sqrt(q) Z).
double at_value(const ModelParams& params, double q);

// The bracket E log cosh(h + beta sqrt(q) Z) + beta^2 (1-q)^2 / 4.
double rs_bracket(const ModelParams& params, double q);

// inf_{q >= 0} of rs_bracket. Verified against a 1001-point scan of [0, 1].
double rs_free_energy(const ModelParams& params);

// sup_x (beta^2 x^2 / 2 - J(x)), J the Cramer rate function of
// eta = (sigma - m)(sigma' - m) for independent +-1 spins of mean m.
double toy_exponent(double beta, double m);

// Cramer rate function J used by toy_exponent; exposed for testing.
double toy_rate_function(double x, double m);

}  // namespace sklab
