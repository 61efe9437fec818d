#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "pce/error.hpp"
#include "pce/kernel.hpp"
#include "pce/random.hpp"

using namespace pce;

TEST_SUITE("kernel") {
  TEST_CASE("point values") {
    const KernelConfig k{0.3};
    const PrincipalPoint c{0.4, -1.0};
    CHECK(kernel_weight(k, c, c) == doctest::Approx(1.0 / (2.0 * std::numbers::pi * 0.09)).epsilon(1e-14));
    CHECK(kernel_weight(KernelConfig{1.0}, {0, 0}, {1, 0}) == doctest::Approx(0.0965324).epsilon(1e-6));
    CHECK(kernel_marginal(KernelConfig{0.5}, c, Axis::treated, 0.4) == doctest::Approx(0.7978846).epsilon(1e-7));
    CHECK(kernel_marginal(KernelConfig{0.5}, c, Axis::control, -1.0 + 10 * 0.5) < 1e-12);
    CHECK_THROWS_AS(KernelConfig{0.0}.validate(), ConfigError);
    CHECK_THROWS_AS(KernelConfig{-1.0}.validate(), ConfigError);
  }

  TEST_CASE("moments: mass one, zero first moments, second moment h^2, scale bound") {
    CounterRng rng(31);
    for (int i = 0; i < 10; ++i) {
      const KernelConfig k{0.05 + rng.uniform()};
      const PrincipalPoint c{rng.normal(), rng.normal()};
      const double L = 12.0 * k.h;
      auto moment = [&](auto f) {
        return oracle::integrate2([&](double a, double b) { return f(a, b) * kernel_weight(k, c, {a, b}); },
                                  c.m1 - L, c.m1 + L, c.m0 - L, c.m0 + L, 1e-12);
      };
      CHECK(moment([](double, double) { return 1.0; }) == doctest::Approx(1.0).epsilon(1e-10));
      // Shifted by one so the integrals are not zero under a relative tolerance.
      CHECK(std::abs(moment([&](double a, double) { return a - c.m1 + 1.0; }) - 1.0) <= 1e-10);
      CHECK(std::abs(moment([&](double, double b) { return b - c.m0 + 1.0; }) - 1.0) <= 1e-10);
      CHECK(moment([&](double a, double) { return (a - c.m1) * (a - c.m1); }) ==
            doctest::Approx(k.h * k.h).epsilon(1e-9));
      const double l2 = oracle::integrate2([&](double a, double b) { return std::pow(kernel_weight(k, c, {a, b}), 2); },
                                           c.m1 - L, c.m1 + L, c.m0 - L, c.m0 + L, 1e-12);
      CHECK(k.h * k.h * l2 <= 1.0 / (4.0 * std::numbers::pi) + 1e-12);
    }
  }

  TEST_CASE("marginal equals the integral of the weight over the free axis") {
    CounterRng rng(32);
    for (int i = 0; i < 10; ++i) {
      const KernelConfig k{0.1 + rng.uniform()};
      const PrincipalPoint c{rng.normal(), rng.normal()};
      const double m = c.m1 + k.h * rng.normal();
      const double want = oracle::integrate([&](double b) { return kernel_weight(k, c, {m, b}); },
                                            c.m0 - 14 * k.h, c.m0 + 14 * k.h, 1e-14);
      CHECK(kernel_marginal(k, c, Axis::treated, m) == doctest::Approx(want).epsilon(1e-10));
      const double m0 = c.m0 + k.h * rng.normal();
      const double want0 = oracle::integrate([&](double a) { return kernel_weight(k, c, {a, m0}); },
                                             c.m1 - 14 * k.h, c.m1 + 14 * k.h, 1e-14);
      CHECK(kernel_marginal(k, c, Axis::control, m0) == doctest::Approx(want0).epsilon(1e-10));
    }
  }

  TEST_CASE("bandwidth rules") {
    CHECK(bandwidth_for(BandwidthRule::optimal, 2000) == doctest::Approx(0.15 * std::pow(2000.0, -1.0 / 6.0)));
    CHECK(bandwidth_for(BandwidthRule::undersmooth, 700) == doctest::Approx(0.1 * std::pow(700.0, -0.2)));
    CHECK(bandwidth_for(BandwidthRule::optimal, 64, 0.3) == doctest::Approx(0.3 / 2.0));
    CHECK(parse_bandwidth_rule("undersmooth") == BandwidthRule::undersmooth);
    CHECK_THROWS_AS(parse_bandwidth_rule("silverman"), ConfigError);
    CHECK_THROWS_AS(bandwidth_for(BandwidthRule::explicit_value, 10), ConfigError);
  }
}
