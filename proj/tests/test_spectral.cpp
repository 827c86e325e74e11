#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "critmass/spectral.hpp"
#include "doctest.h"

using namespace critmass;

namespace {

// Reference route for constrained eigenproblems: null space from an SVD and a
// dense generalized solver.
std::vector<double> dense_constrained(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                      const Eigen::MatrixXd& c) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd z = Eigen::MatrixXd::Identity(n, n);
  if (c.cols() > 0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(c.transpose(), Eigen::ComputeFullV);
    const Eigen::Index rank = (svd.singularValues().array() > 1e-10 * svd.singularValues()(0)).count();
    z = svd.matrixV().rightCols(n - rank);
  }
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(z.transpose() * a * z, z.transpose() * b * z,
                                                               Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = es.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

Eigen::MatrixXd constraint_matrix(const OperatorDiscretization& op, const std::vector<Constraint>& cs) {
  Eigen::MatrixXd c(op.dofs(), 0);
  for (auto k : cs) {
    const Eigen::VectorXd v = op.constraint_vector(k);
    if (v.norm() == 0.0) continue;
    c.conservativeResize(Eigen::NoChange, c.cols() + 1);
    c.col(c.cols() - 1) = v;
  }
  return c;
}

}  // namespace

TEST_CASE("mode-0 Poisson solve matches the closed form for zero-mass data") {
  // w = (1 - r^2/2) e^{-r^2/2} has zero mass and phi = e^{-r^2/2} / 2.
  auto run = [](double f) {
    const auto grid = RadialGrid::geometric({12.0, 1e-3 / f, 1.0 + 0.03 / f, 0.05 / f});
    const ModeKPoissonSolver ps(grid, 0);
    std::vector<double> w(grid.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (1.0 - 0.5 * grid[i] * grid[i]) * std::exp(-0.5 * grid[i] * grid[i]);
    const auto phi = ps.solve(w);
    CHECK(phi.back() == 0.0);
    Eigen::VectorXd we = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    const Eigen::VectorXd load = ps.mass_matrix().apply(we);
    CHECK(ps.residual(ps.solve_load(load), load) <= 1e-10);
    double err = 0;
    for (std::size_t i = 0; i < w.size(); ++i) err = std::max(err, std::abs(phi[i] - 0.5 * std::exp(-0.5 * grid[i] * grid[i])));
    return err;
  };
  const double e1 = run(1.0), e2 = run(2.0);
  CHECK(e1 < 1e-3);
  CHECK(e1 / e2 > 3.5);  // second order
}

TEST_CASE("mode-1 Poisson solve with the decay condition") {
  // w = r e^{-r^2/2} gives phi = (1 - e^{-r^2/2}) / r, which decays like 1/r.
  const auto grid = RadialGrid::geometric({40.0, 1e-3, 1.03, 0.05});
  const ModeKPoissonSolver ps(grid, 1);
  std::vector<double> w(grid.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = grid[i] * std::exp(-0.5 * grid[i] * grid[i]);
  const auto phi = ps.solve(w);
  CHECK(phi[0] == 0.0);
  double err = 0;
  for (std::size_t i = 1; i < w.size(); ++i) {
    const double r = grid[i];
    err = std::max(err, std::abs(phi[i] - (1.0 - std::exp(-0.5 * r * r)) / r));
  }
  CHECK(err < 1e-3);
}

TEST_CASE("free-space gauge shift for data with mass") {
  // Gaussian of mass 2pi: outside the core phi = -log r.
  const auto grid = RadialGrid::geometric({30.0, 1e-3, 1.03, 0.05});
  const ModeKPoissonSolver ps(grid, 0);
  std::vector<double> w(grid.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(-0.5 * grid[i] * grid[i]);
  const auto phi = ps.solve(w, true);
  std::size_t k = 0;
  while (grid[k] < 10.0) ++k;
  CHECK(phi[k] == doctest::Approx(-std::log(grid[k])).epsilon(1e-3));
}

TEST_CASE("operator forms: symmetry, positivity on zero mass, b-form identity") {
  const double mu = 1e-2;
  const auto grid = spectral_grid(mu);
  const auto op = assemble_operator(mu, grid, 0);
  CHECK(op.symmetry_defect <= 1e-12);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  const Eigen::VectorXd c = op.constraint_vector(Constraint::mass);
  int positive = 0;
  for (int s = 0; s < 100; ++s) {
    Eigen::VectorXd g(op.dofs());
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = nd(rng) * std::exp(-0.02 * grid[i]);
    g -= (c.dot(g) / c.sum()) * Eigen::VectorXd::Ones(g.size());
    if (g.dot(op.b * g) > 0.0) ++positive;
  }
  CHECK(positive == 100);

  // Independent evaluation: g(r) = (1 - r^2/4) e^{-r^2/8} shifted to zero
  // mass, int Q g^2 and int |grad phi|^2 = 2pi int m(r)^2 / r dr by
  // adaptive quadrature on a separate fine profile table.
  auto gfun = [](double r) { return (1.0 - 0.25 * r * r) * std::exp(-0.125 * r * r); };
  const auto fine = RadialGrid::geometric({grid.r_max(), 1e-5, 1.002, 0.005});
  const auto st = integrate_profile(mu, fine.nodes());
  std::vector<double> qf(fine.size()), gq(fine.size()), q1(fine.size());
  for (std::size_t i = 0; i < fine.size(); ++i) {
    qf[i] = 8.0 * std::exp(st[i].phi - 0.5 * mu * fine[i] * fine[i]);
    gq[i] = qf[i] * gfun(fine[i]);
  }
  const double shift = radial_moments(fine.nodes(), gq).mass.value / radial_moments(fine.nodes(), qf).mass.value;
  std::vector<double> w(fine.size());
  for (std::size_t i = 0; i < fine.size(); ++i) w[i] = qf[i] * (gfun(fine[i]) - shift);
  std::vector<double> wr(fine.size()), w2q(fine.size());
  for (std::size_t i = 0; i < fine.size(); ++i) {
    wr[i] = w[i] * fine[i];
    w2q[i] = w[i] * w[i] / qf[i];
  }
  const auto m = cumulative_trapezoid(fine.nodes(), wr);
  std::vector<double> grad2(fine.size(), 0.0);
  for (std::size_t i = 1; i < fine.size(); ++i) grad2[i] = m[i] * m[i] / (fine[i] * fine[i]);
  const double oracle = radial_moments(fine.nodes(), w2q).mass.value - radial_moments(fine.nodes(), grad2).mass.value;

  Eigen::VectorXd g(op.dofs());
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = gfun(grid[i]) - shift;
  CHECK(g.dot(op.b * g) == doctest::Approx(oracle).epsilon(2e-3));
  CHECK(g.dot(op.apply_b(g)) == doctest::Approx(g.dot(op.b * g)).epsilon(1e-10));
  CHECK(g.dot(op.apply_a(g)) == doctest::Approx(g.dot(op.a * g)).epsilon(1e-10));
}

TEST_CASE("self-adjointness of L with respect to M") {
  const double mu = 1e-2;
  const auto op = assemble_operator(mu, spectral_grid(mu), 0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int s = 0; s < 10; ++s) {
    Eigen::VectorXd u(op.dofs()), v(op.dofs());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      u(i) = nd(rng);
      v(i) = nd(rng);
    }
    const double uv = v.dot(op.a * u), vu = u.dot(op.a * v);
    CHECK(std::abs(uv - vu) <= 1e-10 * std::max(1.0, std::abs(uv)));
  }
}

TEST_CASE("algebraic identities hold and improve under refinement") {
  const double mu = 1e-2;
  const auto coarse = verify_algebraic_identities(mu, identity_grid(mu, 0.5));
  const auto fine = verify_algebraic_identities(mu, identity_grid(mu));
  CHECK(fine.dmu_to_lambda <= 1e-4);
  CHECK(fine.lambda_eigen <= 1e-4);
  CHECK(fine.grad_eigen <= 1e-4);
  CHECK(fine.kernel <= 1e-4);
  CHECK(fine.dmu_to_lambda < coarse.dmu_to_lambda);
  CHECK(fine.lambda_eigen < coarse.lambda_eigen);
  CHECK(fine.grad_eigen < coarse.grad_eigen);
  CHECK(fine.kernel < coarse.kernel);
  CHECK(fine.grad_rayleigh / mu == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("mode-1 eigenvalue mu is linear in mu as mu -> 0") {
  // Rayleigh quotient of Q' on the identity grid: slope of nu(mu) in log-log.
  const double m1 = 1e-3, m2 = 1e-2;
  const double n1 = verify_algebraic_identities(m1, identity_grid(m1)).grad_rayleigh;
  const double n2 = verify_algebraic_identities(m2, identity_grid(m2)).grad_rayleigh;
  const double slope = std::log(n2 / n1) / std::log(m2 / m1);
  CHECK(slope == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("Lanczos agrees with the dense reference") {
  const double mu = 1e-2;
  for (int k : {0, 1}) {
    const auto op = assemble_operator(mu, spectral_grid(mu), k);
    for (const char* set : {"mass", "full"}) {
      const auto cs = constraint_set(set);
      const auto rep = spectral_gap(op, cs);
      const auto ref = dense_constrained(op.a, op.b, constraint_matrix(op, cs));
      REQUIRE(rep.eigenvalues.size() == 5);
      for (int i = 0; i < 5; ++i) CHECK(rep.eigenvalues[i] == doctest::Approx(ref[i]).epsilon(1e-8));
    }
  }
}

TEST_CASE("spectral gap under mass and full constraints") {
  for (double mu : {1e-3, 1e-2, 1e-1}) {
    CAPTURE(mu);
    const auto op = assemble_operator(mu, spectral_grid(mu), 0);
    const auto mass = spectral_gap(op, constraint_set("mass"));
    const auto full = spectral_gap(op, constraint_set("full"));
    CHECK(mass.nu1_over_mu >= 0.99);
    CHECK(full.nu1_over_mu > 2.0);
    // Dilation is a combination of mass and second moment.
    CHECK(full.constraint_rank == 2);
    // min-max: more constraints never lower nu_1
    CHECK(full.eigenvalues[0] >= mass.eigenvalues[0]);

    const auto fine = assemble_operator(mu, spectral_grid(mu, 2.0), 0);
    CHECK(spectral_gap(fine, constraint_set("full")).nu1_over_mu == doctest::Approx(full.nu1_over_mu).epsilon(1e-2));
    CHECK(spectral_gap(fine, constraint_set("mass")).nu1_over_mu == doctest::Approx(mass.nu1_over_mu).epsilon(1e-2));
  }
}

TEST_CASE("mode 1: lowest eigenvalue is mu, removed by the center constraint") {
  const double mu = 1e-2;
  const auto op = assemble_operator(mu, spectral_grid(mu), 1);
  CHECK(op.constraint_vector(Constraint::mass).norm() == 0.0);
  const auto none = spectral_gap(op, constraint_set("mass"));
  CHECK(none.nu1_over_mu == doctest::Approx(1.0).epsilon(1e-2));
  const auto full = spectral_gap(op, constraint_set("full"));
  CHECK(full.constraint_rank == 1);
  CHECK(full.nu1_over_mu > 2.0);
}

TEST_CASE("eigen solver error paths") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(4, 4), b = -Eigen::MatrixXd::Identity(4, 4);
  CHECK_THROWS_AS(constrained_smallest(a, b, Eigen::MatrixXd(4, 0), 1.0), Error);
  try {
    constrained_smallest(a, b, Eigen::MatrixXd(4, 0), 1.0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::IndefiniteB);
  }
  try {
    constrained_smallest(a, Eigen::MatrixXd::Identity(4, 4), Eigen::MatrixXd::Identity(4, 4), 1.0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EigenSolveFailure);
  }
  CHECK_THROWS_AS(assemble_operator(0.0, spectral_grid(1e-2), 0), Error);
}

TEST_CASE("Hardy constant: finite, uniform band, constraint necessary") {
  std::vector<double> c;
  for (double mu : {1e-3, 1e-2, 1e-1}) {
    const auto h = hardy_constant(mu, spectral_grid(mu));
    CHECK(std::isfinite(h.constant));
    CHECK(h.constant > 0.0);
    CHECK(std::abs(h.unconstrained_nu) < 1e-8);
    c.push_back(h.constant);
  }
  CHECK(*std::max_element(c.begin(), c.end()) < 2.0 * *std::min_element(c.begin(), c.end()));
  const double mu = 1e-2;
  CHECK(hardy_constant(mu, spectral_grid(mu, 2.0)).constant == doctest::Approx(c[1]).epsilon(1e-2));
}

TEST_CASE("weighted Poincare: constant case from profile moments, sharp constant uniform") {
  const double mu = 1e-2;
  const auto grid = spectral_grid(mu);
  const auto rep = verify_weighted_poincare(mu, grid, 100, 42);
  // f = 1: ratio = mu int Q r^2 / int_{B1} Q with both moments from the profile ODE.
  const std::vector<double> radii{1.0, grid.r_max()};
  const auto st = integrate_profile(mu, radii);
  const double i2 = 2.0 * kPi * st[1].m2, m1 = -2.0 * kPi * st[0].psi;
  CHECK(rep.constant_case == doctest::Approx(mu * i2 / m1).epsilon(1e-4));
  CHECK(rep.c_prime <= rep.sharp * (1 + 1e-9));
  const auto other = verify_weighted_poincare(1e-3, spectral_grid(1e-3), 100, 42);
  CHECK(std::max(rep.sharp, other.sharp) < 2.0 * std::min(rep.sharp, other.sharp));
}

TEST_CASE("potential bounds: gradient ratio below one, Lambda Q finite") {
  std::vector<double> sup, grad;
  for (double mu : {1e-3, 1e-2, 1e-1}) {
    const auto rep = verify_potential_bounds(mu, spectral_grid(mu), 100, 42);
    // (M w, w) >= 0 on zero mass means int |grad phi|^2 <= int w^2/Q.
    CHECK(rep.grad_ratio <= 1.0);
    for (double x : rep.lambda_q_ratios) CHECK(std::isfinite(x));
    sup.push_back(rep.sup_ratio);
    grad.push_back(rep.grad_ratio);
  }
  CHECK(sup[0] < 2.0 * sup[2]);
  CHECK(grad[0] < 2.0 * grad[2]);
}

TEST_CASE("profile residual: two evaluations agree, mu_tilde^2 term scales like mu^2") {
  const auto a = verify_profile_residual(1e-2, RadialGrid::for_profile(1e-2));
  const auto b = verify_profile_residual(1e-2, RadialGrid::for_profile(1e-2, 1.01, 0.25));
  CHECK(a.difference < 1e-3 * a.direct_norm);
  CHECK(b.difference < 0.35 * a.difference);
  const auto lo = verify_profile_residual(1e-3, RadialGrid::for_profile(1e-3));
  const double slope = std::log(a.quadratic_norm / lo.quadratic_norm) / std::log(10.0);
  CHECK(slope == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("(Lambda Q, M eps) vanishes for zero-mass, zero-second-moment eps") {
  const double mu = 1e-2;
  const auto op = assemble_operator(mu, spectral_grid(mu), 0);
  const Eigen::VectorXd c0 = op.moment[0], c2 = op.moment[2];
  Eigen::VectorXd g(op.dofs()), h1(op.dofs()), h2(op.dofs());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double r = op.grid[static_cast<std::size_t>(i)];
    g(i) = std::cos(r) * std::exp(-0.1 * r * r);
    h1(i) = std::exp(-0.5 * r * r);
    h2(i) = r * r * h1(i);
  }
  Eigen::Matrix2d m;
  m << c0.dot(h1), c0.dot(h2), c2.dot(h1), c2.dot(h2);
  const Eigen::Vector2d ab = m.partialPivLu().solve(Eigen::Vector2d(c0.dot(g), c2.dot(g)));
  g -= ab(0) * h1 + ab(1) * h2;
  const double pairing = op.g_lambda.dot(op.b * g);
  CHECK(std::abs(pairing) < 1e-3 * op.weighted_norm(op.g_lambda) * op.weighted_norm(g));
}
