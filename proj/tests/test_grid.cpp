#include <cmath>

#include "critmass/grid.hpp"
#include "doctest.h"

using namespace critmass;

TEST_CASE("geometric grid invariants") {
  const GridSpec spec{50.0, 1e-4, 1.02, 0.5};
  const auto g = RadialGrid::geometric(spec);
  CHECK(g[0] == 0.0);
  CHECK(g.r_max() == 50.0);
  for (std::size_t i = 1; i < g.size(); ++i) REQUIRE(g[i] > g[i - 1]);
  CHECK(g.min_spacing() == doctest::Approx(1e-4).epsilon(0.02));
  CHECK(g.max_spacing() <= 0.5 * 1.02);
  for (std::size_t i = 2; i < g.size(); ++i) {
    const double q = (g[i] - g[i - 1]) / (g[i - 1] - g[i - 2]);
    REQUIRE(q >= 1.0 - 1e-9);
    REQUIRE(q <= spec.growth + 1e-9);
  }
  CHECK(g.grading_ratio() <= spec.growth + 1e-9);
}

TEST_CASE("grid rejects bad nodes") {
  CHECK_THROWS_AS(RadialGrid({0.1, 0.2, 0.3}), Error);
  CHECK_THROWS_AS(RadialGrid({0.0, 0.2, 0.2}), Error);
  CHECK_THROWS_AS(RadialGrid::geometric({-1.0, 1e-3, 1.1, 0.1}), Error);
}

TEST_CASE("profile grid reaches the Gaussian cutoff") {
  for (double mu : {1e-4, 1e-2, 1.0}) {
    const auto g = RadialGrid::for_profile(mu);
    CHECK(g.r_max() >= 10.0 / std::sqrt(mu));
  }
}

TEST_CASE("trapezoid converges at second order") {
  // int_0^3 e^{-r} r dr on refined uniform grids
  const double exact = 1.0 - 4.0 * std::exp(-3.0);
  double prev = 0;
  for (int n : {40, 80, 160, 320}) {
    std::vector<double> r(n + 1), f(n + 1);
    for (int i = 0; i <= n; ++i) {
      r[i] = 3.0 * i / n;
      f[i] = std::exp(-r[i]) * r[i];
    }
    const double err = std::abs(trapezoid(r, f).value - exact);
    if (prev > 0) CHECK(std::log2(prev / err) >= 1.8);
    prev = err;
  }
}

TEST_CASE("richardson estimate tracks the true error") {
  std::vector<double> r(201), f(201);
  for (int i = 0; i <= 200; ++i) {
    r[i] = 2.0 * i / 200;
    f[i] = std::sin(r[i]);
  }
  const auto q = trapezoid(r, f);
  const double err = std::abs(q.value - (1.0 - std::cos(2.0)));
  CHECK(q.error > 0.5 * err);
  CHECK(q.error < 2.0 * err);
}

TEST_CASE("radial moments of a Gaussian") {
  // u = e^{-r^2/2}: mass 2pi, second moment 4pi
  const auto g = RadialGrid::geometric({12.0, 1e-4, 1.01, 0.01});
  std::vector<double> f(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) f[i] = std::exp(-0.5 * g[i] * g[i]);
  const auto m = radial_moments(g.nodes(), f);
  CHECK(m.mass.value == doctest::Approx(2 * M_PI).epsilon(1e-5));
  CHECK(m.second_moment.value == doctest::Approx(4 * M_PI).epsilon(1e-5));
  CHECK(m.tail_mass < 1e-10);
}

TEST_CASE("gauss-legendre integrates polynomials exactly") {
  for (int n : {2, 4, 5}) {
    const auto& rule = gauss_legendre(n);
    for (int deg = 0; deg < 2 * n; ++deg) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += rule.w[i] * std::pow(rule.x[i], deg);
      const double exact = deg % 2 ? 0.0 : 2.0 / (deg + 1);
      CHECK(s == doctest::Approx(exact).epsilon(1e-13));
    }
  }
}
