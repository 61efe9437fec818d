#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "pce/error.hpp"
#include "pce/quadrature.hpp"
#include "pce/random.hpp"

using namespace pce;

namespace {

QuadratureConfig config_for(std::size_t n) {
  QuadratureConfig q;
  q.n = n;
  return q;
}

double gauss2(const PrincipalPoint& u, const PrincipalPoint& c, double s) {
  return oracle::phi((u.m1 - c.m1) / s) * oracle::phi((u.m0 - c.m0) / s) / (s * s);
}

}  // namespace

TEST_SUITE("quadrature") {
  TEST_CASE("grid sizes follow the rule and the override") {
    auto q = config_for(1000);
    const double ln = std::log(1000.0);
    CHECK(q.points_2d() == static_cast<std::size_t>(std::ceil(std::pow(ln, 1.25) * std::sqrt(1000.0))));
    CHECK(q.points_1d() == static_cast<std::size_t>(std::ceil(std::pow(ln, 1.5) * 1000.0)));
    CHECK(q.half_width_2d(0.2) == doctest::Approx(0.5 * 4.0 * 0.2 * std::sqrt(ln)));
    CHECK(q.truncation_mass_2d() <= 1.0 / 1000.0);
    CHECK(q.truncation_mass_1d() <= 1.0 / 1000.0);
    q.override_n = 64;
    CHECK(q.points_2d() == 64);
    q.override_n = 4;
    CHECK_THROWS_AS(q.validate(), ConfigError);
    q.override_n = 0;
    q.c1 = 2.0;
    CHECK_THROWS_AS(q.validate(), ConfigError);
    CHECK(parse_quadrature_mode("adaptive") == QuadratureMode::adaptive);
    CHECK_THROWS_AS(parse_quadrature_mode("simpson"), ConfigError);
  }

  TEST_CASE("smooth2d: constants, linear functions, gaussian convolution") {
    CounterRng rng(41);
    for (int i = 0; i < 10; ++i) {
      const std::size_t n = 200 + static_cast<std::size_t>(rng.below(2000));
      const auto q = config_for(n);
      const KernelConfig k{0.05 + 0.5 * rng.uniform()};
      const PrincipalPoint c{rng.normal(), rng.normal()};
      const auto one = smooth2d(q, k, c, [](const PrincipalPoint&) { return 1.0; });
      CHECK(std::abs(one.value - 1.0) <= 1.0 / static_cast<double>(n));
      CHECK(one.evaluations == q.points_2d() * q.points_2d());
      const double a = rng.normal(), b = rng.normal();
      const auto lin = smooth2d(q, k, c, [&](const PrincipalPoint& u) { return a * u.m1 + b * u.m0; });
      CHECK(std::abs(lin.value - (a * c.m1 + b * c.m0) * one.value) <= 1e-12 * (1 + std::abs(a) + std::abs(b)));
      const double s = 0.1 + rng.uniform();
      const auto conv = smooth2d(q, k, c, [&](const PrincipalPoint& u) { return gauss2(u, c, s); });
      CHECK(std::abs(conv.value - 1.0 / (2.0 * std::numbers::pi * (s * s + k.h * k.h))) <= 1e-6);
    }
  }

  TEST_CASE("smooth2d reports the offending point of a non-finite integrand") {
    try {
      smooth2d(config_for(100), KernelConfig{0.2}, {0, 0}, [](const PrincipalPoint& u) {
        return u.m1 > 0.1 ? std::nan("") : 1.0;
      });
      FAIL("expected an error");
    } catch (const EstimationError& e) {
      CHECK(std::string(e.what()).find("grid point") != std::string::npos);
    }
  }

  TEST_CASE("doubling the grid never increases the grid bound") {
    CounterRng rng(42);
    for (int i = 0; i < 10; ++i) {
      auto q = config_for(500);
      const KernelConfig k{0.2};
      const PrincipalPoint c{rng.normal(), rng.normal()};
      const double s = 0.2 + rng.uniform();
      const PrincipalPoint mu{c.m1 + rng.normal(), c.m0 + rng.normal()};
      auto g = [&](const PrincipalPoint& u) { return gauss2(u, mu, s) * (1.0 + 0.3 * u.m1); };
      double last = INFINITY;
      for (std::size_t N : {16u, 32u, 64u, 128u, 256u}) {
        q.override_n = N;
        const double b = smooth2d(q, k, c, g).error_bound;
        CHECK(b <= last * (1.0 + 1e-12));
        last = b;
      }
    }
  }

  TEST_CASE("smooth1d: marginalization, linearity, gaussian product") {
    CounterRng rng(43);
    for (int i = 0; i < 10; ++i) {
      const auto q = config_for(300);
      const KernelConfig k{0.1 + 0.4 * rng.uniform()};
      const PrincipalPoint c{rng.normal(), rng.normal()};
      for (Axis axis : {Axis::treated, Axis::control}) {
        const double fixed = (axis == Axis::treated ? c.m1 : c.m0) + k.h * rng.normal();
        const double marginal = kernel_marginal(k, c, axis, fixed);
        const auto one = smooth1d(q, k, c, axis, fixed, [](double) { return 1.0; });
        CHECK(std::abs(one.value - marginal) <= 1e-6);
        const auto cst = smooth1d(q, k, c, axis, fixed, [](double) { return 2.5; });
        CHECK(cst.value == doctest::Approx(2.5 * one.value).epsilon(1e-14));
        const double s = 0.1 + rng.uniform();
        const double free_c = axis == Axis::treated ? c.m0 : c.m1;
        const double a = free_c + rng.normal(0.0, 0.5);
        const auto gp = smooth1d(q, k, c, axis, fixed, [&](double m) { return oracle::phi((m - a) / s) / s; });
        const double v = std::sqrt(s * s + k.h * k.h);
        CHECK(std::abs(gp.value - marginal * oracle::phi((a - free_c) / v) / v) <= 1e-6);
      }
    }
  }

  TEST_CASE("adaptive rules") {
    const auto r = adaptive_1d([](double x) { return std::exp(-x * x); }, -10.0, 10.0, 1e-12);
    CHECK(r.value == doctest::Approx(std::sqrt(std::numbers::pi)).epsilon(1e-12));
    const PrincipalPoint c{0.3, -0.2};
    const KernelConfig k{0.25};
    const auto one = adaptive_oracle_2d(c, k, [](const PrincipalPoint&) { return 1.0; }, 1e-9);
    CHECK(std::abs(one.value - 1.0) <= 1e-9);
    // A step function converges but needs many subdivisions.
    const auto step = adaptive_oracle_2d(c, k, [&](const PrincipalPoint& u) { return u.m1 > c.m1 + 0.0123 ? 1.0 : 0.0; }, 1e-6);
    CHECK(step.value == doctest::Approx(1.0 - oracle::Phi(0.0123 / k.h)).epsilon(1e-5));
    CHECK(step.evaluations > one.evaluations);
    CHECK_THROWS_AS(adaptive_1d([](double x) { return x > 0.1 ? 1.0 : 0.0; }, -1.0, 1.0, 1e-15, 8),
                    QuadratureBudgetError);
    try {
      adaptive_1d([](double x) { return x > 0.1 ? 1.0 : 0.0; }, -1.0, 1.0, 1e-15, 8);
    } catch (const QuadratureBudgetError& e) {
      CHECK(std::abs(e.best_estimate() - 0.9) <= 0.05);
      CHECK(e.achieved_error() > 1e-15);
    }
  }

  TEST_CASE("grid and adaptive oracle agree within the reported bound") {
    CounterRng rng(44);
    const auto q = config_for(500);
    for (int i = 0; i < 50; ++i) {
      const KernelConfig k{0.1 + 0.3 * rng.uniform()};
      const PrincipalPoint c{rng.normal(), rng.normal()};
      const PrincipalPoint mu{c.m1 + rng.normal(), c.m0 + rng.normal()};
      const double s = 0.3 + rng.uniform();
      const double a = rng.normal();
      auto g = [&](const PrincipalPoint& u) { return gauss2(u, mu, s) * std::cos(a * u.m0) + 0.1 * u.m1; };
      const auto grid = smooth2d(q, k, c, g);
      const auto ref = adaptive_oracle_2d(c, k, g, 1e-9);
      CHECK(std::abs(grid.value - ref.value) <= grid.error_bound + 1e-9);
    }
  }
}
