#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "sklab/error.hpp"
#include "sklab/order_params.hpp"

using namespace sklab;
using mp = boost::multiprecision::cpp_bin_float_50;

namespace {

ModelParams params(double beta, double h) {
  ModelParams p;
  p.beta = beta;
  p.h = h;
  return p;
}

// Trapezoid rule against the Gaussian density; spectrally accurate for the
// analytic integrands used here.
template <class T, class F>
T trapezoid_expect(F&& f, double step = 0.125, double half_width = 14.0) {
  const int n = static_cast<int>(half_width / step);
  const T norm = T(step) / sqrt(2 * boost::math::constants::pi<T>());
  T sum = 0;
  for (int i = -n; i <= n; ++i) {
    const T x = T(i) * T(step);
    sum += exp(-x * x / 2) * f(x);
  }
  return sum * norm;
}

double trapezoid(const std::function<double(double)>& f) {
  return trapezoid_expect<double>([&](double x) { return f(x); }, 0.01, 12.0);
}

struct MpSequences {
  mp q;
  std::vector<mp> rho;
  std::vector<mp> gamma;
  std::vector<mp> gamma_sq_gap;
};

// Independent 50-digit reference for q, rho_k and gamma_k.
MpSequences mp_sequences(double beta_d, double h_d, int stages) {
  const mp beta = beta_d;
  const mp h = h_d;
  auto fixed_map = [&](const mp& q) {
    const mp s = sqrt(q);
    return trapezoid_expect<mp>([&](const mp& x) {
      const mp t = tanh(h + beta * s * x);
      return t * t;
    });
  };
  mp lo = 0, hi = 1;
  for (int i = 0; i < 200; ++i) {
    const mp mid = (lo + hi) / 2;
    if (fixed_map(mid) > mid) lo = mid;
    else hi = mid;
  }
  MpSequences out;
  out.q = (lo + hi) / 2;
  const mp q = out.q;
  auto psi = [&](const mp& t) {
    const mp a = sqrt(t);
    const mp b = sqrt(q - t);
    return trapezoid_expect<mp>([&](const mp& z) {
      const mp inner = trapezoid_expect<mp>([&](const mp& w) { return tanh(h + beta * (a * z + b * w)); });
      return inner * inner;
    });
  };
  const mp gamma1 = trapezoid_expect<mp>([&](const mp& x) { return tanh(h + beta * sqrt(q) * x); });
  mp rho = sqrt(q) * gamma1;
  mp gamma = gamma1;
  mp residual = q;
  for (int k = 1; k <= stages; ++k) {
    if (k > 1) {
      rho = psi(rho);
      gamma = (rho - (q - residual)) / sqrt(residual);
    }
    out.rho.push_back(rho);
    out.gamma.push_back(gamma);
    residual -= gamma * gamma;
    out.gamma_sq_gap.push_back(residual);
  }
  return out;
}

}  // namespace

TEST_CASE("Gauss-Hermite rule reproduces Gaussian moments") {
  const auto& rule = gauss_hermite(61);
  REQUIRE(rule.nodes.size() == 61);
  long double total = 0.0L;
  for (auto w : rule.weights) total += w;
  CHECK(static_cast<double>(total) == doctest::Approx(1.0).epsilon(1e-15));
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    CHECK(static_cast<double>(rule.nodes[i] + rule.nodes[rule.nodes.size() - 1 - i]) ==
          doctest::Approx(0.0).epsilon(1e-15));
  }
  const double m2 = gauss_expect([](double x) { return x * x; }, 61);
  const double m4 = gauss_expect([](double x) { return x * x * x * x; }, 61);
  const double m8 = gauss_expect([](double x) { return std::pow(x, 8); }, 61);
  CHECK(std::fabs(m2 - 1.0) < 1e-13);
  CHECK(std::fabs(m4 - 3.0) < 1e-13);
  CHECK(std::fabs(m8 - 105.0) < 1e-11);
  CHECK(&gauss_hermite(61) == &rule);
}

TEST_CASE("gauss_expect agrees with Monte Carlo") {
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> z;
  const int samples = 1'000'000;
  double sum = 0.0, sum2 = 0.0;
  auto f = [](double x) { return std::tanh(0.5 + 0.7 * x) * std::tanh(0.5 + 0.7 * x); };
  for (int i = 0; i < samples; ++i) {
    const double v = f(z(rng));
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / samples;
  const double se = std::sqrt((sum2 / samples - mean * mean) / samples);
  CHECK(std::fabs(gauss_expect(f, 61) - mean) < 4.0 * se);
}

TEST_CASE("gauss_expect reports the offending node") {
  // The odd rule has a node at 0.
  CHECK_THROWS_AS(gauss_expect([](double x) { return 1.0 / x; }, 61), NumericalError);
  CHECK_THROWS_AS(gauss_hermite(0), DomainError);
}

TEST_CASE("solve_q") {
  SUBCASE("beta = 0 gives tanh^2 h") {
    for (double h : {0.1, 0.5, 1.0, 3.0}) {
      CHECK(std::fabs(solve_q(params(0.0, h)) - std::tanh(h) * std::tanh(h)) < 1e-14);
    }
  }
  SUBCASE("fixed point residual and an independent bisection") {
    for (auto [beta, h] : {std::pair{0.3, 0.5}, {0.8, 0.2}, {1.5, 1.0}, {0.2, -0.4}}) {
      auto p = params(beta, h);
      // beta sqrt(q) > 1 brings the poles of tanh close to the real axis.
      if (beta > 1.0) p.quad_nodes = 201;
      const double q = solve_q(p);
      const double map = trapezoid([&](double x) {
        const double t = std::tanh(h + beta * std::sqrt(q) * x);
        return t * t;
      });
      CHECK(std::fabs(map - q) < 1e-12);
      double lo = 0.0, hi = 1.0;
      for (int i = 0; i < 100; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double v = trapezoid([&](double x) {
          const double t = std::tanh(h + beta * std::sqrt(mid) * x);
          return t * t;
        });
        (v > mid ? lo : hi) = mid;
      }
      CHECK(std::fabs(q - 0.5 * (lo + hi)) < 1e-12);
    }
  }
  SUBCASE("doubling the node count changes nothing at high temperature") {
    for (auto [beta, h] : {std::pair{0.2, 0.5}, {0.3, 0.5}, {0.8, 0.2}, {1.0, 0.5}}) {
      auto coarse = params(beta, h);
      auto fine = coarse;
      fine.quad_nodes = 2 * coarse.quad_nodes;
      const double qc = solve_q(coarse);
      const double qf = solve_q(fine);
      CHECK(std::fabs(qc - qf) < 1e-9);
      CHECK(std::fabs(rs_free_energy(coarse) - rs_free_energy(fine)) < 1e-9);
      CHECK(std::fabs(at_value(coarse, qc) - at_value(fine, qf)) < 1e-9);
    }
  }
  SUBCASE("invalid parameters") {
    CHECK_THROWS_AS(solve_q(params(0.5, 0.0)), DomainError);
    CHECK_THROWS_AS(solve_q(params(-0.1, 0.5)), DomainError);
    auto p = params(0.2, 0.5);
    p.quad_nodes = 10;
    CHECK_THROWS_AS(solve_q(p), DomainError);
  }
}

TEST_CASE("psi endpoints") {
  const auto p = params(0.3, 0.5);
  const auto order = build_sequences(p, 1);
  CHECK(std::fabs(psi(order.q, order, p) - order.q) < 1e-13);
  const double mean_th = trapezoid([&](double x) { return std::tanh(0.5 + 0.3 * std::sqrt(order.q) * x); });
  CHECK(std::fabs(psi(0.0, order, p) - mean_th * mean_th) < 1e-13);
  CHECK_THROWS_AS(psi(order.q + 0.1, order, p), DomainError);
  CHECK_THROWS_AS(psi(-0.1, order, p), DomainError);
}

TEST_CASE("sequences against a 50-digit reference") {
  const auto order = build_sequences(params(0.3, 0.5), 12);
  const auto ref = mp_sequences(0.3, 0.5, 12);
  CHECK(std::fabs(order.q - ref.q.convert_to<double>()) < 1e-15);
  for (int k = 0; k < 12; ++k) {
    const double gap_ref = (ref.q - ref.rho[k]).convert_to<double>();
    CHECK(std::fabs(order.rho_gap[k] - gap_ref) < 1e-18 + 1e-3 * gap_ref);
    // Late gamma_k come out of a cancellation in rho_k - Gamma_{k-1}^2.
    const double gamma_ref = ref.gamma[k].convert_to<double>();
    CHECK(std::fabs(order.gamma[k] - gamma_ref) < 1e-14 + 1e-4 * gamma_ref);
    const double res_ref = ref.gamma_sq_gap[k].convert_to<double>();
    CHECK(std::fabs(order.gamma_sq_gap[k] - res_ref) < 1e-18 + 1e-3 * res_ref);
  }
  CHECK(order.gamma[0] == doctest::Approx(0.45513).epsilon(1e-4));
}

TEST_CASE("sequence properties") {
  for (auto [beta, h] : {std::pair{0.3, 0.5}, {0.2, 0.5}, {0.5, 1.0}}) {
    const auto order = build_sequences(params(beta, h), 10);
    for (std::size_t k = 0; k < 10; ++k) {
      CHECK(order.rho_gap[k] > 0.0);
      CHECK(order.gamma[k] > 0.0);
      if (k > 0) {
        CHECK(order.rho_gap[k] < order.rho_gap[k - 1]);
        CHECK(order.rho_gap[k] < order.gamma_sq_gap[k - 1]);
      }
    }
    CHECK(order.residual_variance(0) == order.q);
    CHECK(order.residual_variance(3) == order.gamma_sq_gap[2]);
    CHECK_THROWS_AS(order.residual_variance(11), DomainError);
  }
  CHECK_THROWS_AS(build_sequences(params(0.3, 0.5), 0), DomainError);
}

TEST_CASE("AT value") {
  CHECK(std::fabs(at_value(params(1.0, 0.0), 0.0) - 1.0) < 1e-15);
  const double q = solve_q(params(0.3, 0.5));
  const double ref = 0.09 * trapezoid([&](double x) { return std::pow(std::cosh(0.5 + 0.3 * std::sqrt(q) * x), -4.0); });
  CHECK(std::fabs(at_value(params(0.3, 0.5), q) - ref) < 1e-13);
  CHECK(at_value(params(0.3, 0.5), q) == doctest::Approx(0.05571).epsilon(1e-3));
  CHECK_THROWS_AS(at_value(params(0.3, 0.5), 1.5), DomainError);
}

TEST_CASE("replica symmetric free energy") {
  SUBCASE("h = 0 closed form beta^2/4 below beta = 1") {
    for (double beta : {0.0, 0.3, 0.5, 0.9}) {
      CHECK(std::fabs(rs_free_energy(params(beta, 0.0)) - beta * beta / 4.0) < 1e-10);
    }
  }
  SUBCASE("beta = 0 gives log cosh h") {
    CHECK(std::fabs(rs_free_energy(params(0.0, 0.5)) - std::log(std::cosh(0.5))) < 1e-14);
  }
  SUBCASE("infimum over q is attained at the fixed point") {
    const auto p = params(0.3, 0.5);
    const double q = solve_q(p);
    const double value = rs_free_energy(p);
    CHECK(value == doctest::Approx(rs_bracket(p, q)).epsilon(1e-14));
    for (int i = 0; i <= 100; ++i) CHECK(rs_bracket(p, i / 100.0) >= value - 1e-14);
    const double ref = trapezoid([&](double x) { return std::log(std::cosh(0.5 + 0.3 * std::sqrt(q) * x)); }) +
                       0.09 * (1 - q) * (1 - q) / 4.0;
    CHECK(std::fabs(value - ref) < 1e-13);
  }
  SUBCASE("h = 0 above beta = 1 takes a positive minimizer") {
    const auto p = params(1.5, 0.0);
    CHECK(rs_free_energy(p) < rs_bracket(p, 0.0) - 1e-3);
  }
}

TEST_CASE("toy model rate function") {
  const double m = 0.5;
  CHECK(toy_rate_function(0.0, m) == doctest::Approx(0.0).epsilon(1e-10));
  // Mean of eta is 0 and its variance is (1 - m^2)^2, so J(x) ~ x^2 / (2 (1-m^2)^2) near 0.
  const double var = (1 - m * m) * (1 - m * m);
  CHECK(toy_rate_function(1e-3, m) == doctest::Approx(1e-6 / (2 * var)).epsilon(1e-2));
  CHECK(std::isinf(toy_rate_function(3.0, m)));
  CHECK(toy_rate_function(2.2499, m) > 0.0);
  // Brute-force Legendre transform on a fine lambda grid.
  for (double x : {-0.5, 0.3, 1.0, 2.0}) {
    const double a = (1 - m) * (1 - m), b = (1 + m) * (1 + m), c = -(1 - m * m);
    const double pa = (1 + m) * (1 + m) / 4, pb = (1 - m) * (1 - m) / 4, pc = (1 - m * m) / 2;
    double best = 0.0;
    for (int i = -50000; i <= 50000; ++i) {
      const double l = i * 1e-3;
      best = std::max(best, l * x - std::log(pa * std::exp(l * a) + pb * std::exp(l * b) + pc * std::exp(l * c)));
    }
    CHECK(toy_rate_function(x, m) == doctest::Approx(best).epsilon(1e-6));
  }
  CHECK_THROWS_AS(toy_rate_function(0.0, 1.0), DomainError);
}

TEST_CASE("toy model exponent") {
  CHECK(std::fabs(toy_exponent(0.1, 0.5)) < 1e-8);
  CHECK(toy_exponent(1.3, 0.5) == doctest::Approx(1.5098).epsilon(1e-3));
  for (int i = 0; i <= 18; ++i) CHECK(toy_exponent(0.05 * i, 0.0) == 0.0);
  // At beta = 0.5 / (1 - m^2) the exponent still vanishes for moderate m; for
  // m >= 0.7 the mode near the top of the support of eta already wins.
  for (double m : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}) CHECK(toy_exponent(0.5 / (1 - m * m), m) < 1e-12);
  for (double m : {0.7, 0.8, 0.9}) CHECK(toy_exponent(0.5 / (1 - m * m), m) > 1e-3);
  CHECK(toy_exponent(2.0, 0.3) >= toy_exponent(1.5, 0.3));
  CHECK_THROWS_AS(toy_exponent(-1.0, 0.5), DomainError);
}
