#include "critmass/profiles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/numeric/odeint.hpp>

namespace critmass {

namespace odeint = boost::numeric::odeint;

double phi_Q(double r) { return -2.0 * std::log1p(r * r); }
double dphi_Q(double r) { return -4.0 * r / (1.0 + r * r); }
double Q(double r) {
  const double d = 1.0 + r * r;
  return 8.0 / (d * d);
}

namespace {

using State = std::array<double, 6>;

struct ProfileSystem {
  double mu;
  void operator()(const State& x, State& dx, double r) const {
    const double qm = 8.0 * std::exp(x[0] - 0.5 * mu * r * r);
    const double s = x[3] - 0.5 * r * r;
    dx[0] = x[1] / r;
    dx[1] = -r * qm;
    dx[2] = r * r * r * qm;
    dx[3] = x[4] / r;
    dx[4] = -r * s * qm;
    dx[5] = r * r * r * s * qm;
  }
};

// Fourth-order series about the origin.
State series_seed(double mu, double r) {
  const double r2 = r * r, r4 = r2 * r2;
  return {-2.0 * r2 + 0.25 * (4.0 + mu) * r4, -4.0 * r2 + (4.0 + mu) * r4, 2.0 * r4,
          0.25 * r4, r4, -2.0 / 3.0 * r4 * r2};
}

ProfileState to_profile_state(const State& x) { return {x[0], x[1], x[2], x[3], x[4], x[5]}; }

}  // namespace

std::vector<ProfileState> integrate_profile(double mu, std::span<const double> radii,
                                            const ProfileOptions& opt) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw Error(ErrorKind::InvalidArgument, "mu must be >= 0");
  std::vector<ProfileState> out(radii.size());
  std::size_t first = 0;
  while (first < radii.size() && radii[first] == 0.0) ++first;
  if (first == radii.size()) return out;
  for (std::size_t i = first + 1; i < radii.size(); ++i) {
    if (!(radii[i] > radii[i - 1])) throw Error(ErrorKind::InvalidArgument, "radii must be increasing");
  }
  if (radii[first] < 0.0) throw Error(ErrorKind::InvalidArgument, "radii must be nonnegative");

  const double r0 = std::min(radii[first], 1e-4);
  std::vector<double> times;
  times.reserve(radii.size() - first + 1);
  if (r0 < radii[first]) times.push_back(r0);
  times.insert(times.end(), radii.begin() + static_cast<std::ptrdiff_t>(first), radii.end());

  State x = series_seed(mu, r0);
  auto stepper = odeint::make_controlled(opt.atol, opt.rtol, odeint::runge_kutta_fehlberg78<State>());
  std::size_t k = first;
  const bool skip_seed = r0 < radii[first];
  bool seen_seed = false;
  auto observe = [&](const State& s, double) {
    if (skip_seed && !seen_seed) {
      seen_seed = true;
      return;
    }
    out[k++] = to_profile_state(s);
  };
  try {
    if (times.size() == 1) {
      observe(x, r0);
    } else {
      odeint::integrate_times(stepper, ProfileSystem{mu}, x, times.begin(), times.end(), 0.1 * r0, observe);
    }
  } catch (const std::runtime_error& e) {
    throw Error(ErrorKind::NonConvergence, std::string("profile ODE: ") + e.what());
  }
  for (const auto& s : out) {
    if (!std::isfinite(s.phi) || !std::isfinite(s.p) || !std::isfinite(s.m2)) {
      throw Error(ErrorKind::NonConvergence, "profile ODE produced non-finite values");
    }
  }
  return out;
}

double StationaryProfile::identity_residual() const {
  if (mu <= 0) return std::numeric_limits<double>::quiet_NaN();
  const double pred = 2.0 * mass / mu * (1.0 - mass / kEightPi);
  return std::abs(second_moment - pred) / std::abs(second_moment);
}

std::vector<double> StationaryProfile::dmu_q() const {
  std::vector<double> out(q.size());
  const auto& r = grid.nodes();
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = (phi_dmu[i] - 0.5 * r[i] * r[i]) * q[i];
  return out;
}

std::vector<double> StationaryProfile::lambda_q() const {
  std::vector<double> out(q.size());
  const auto& r = grid.nodes();
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = (2.0 + r[i] * (dphi[i] - mu * r[i])) * q[i];
  return out;
}

std::vector<double> StationaryProfile::phi_lambda_q() const {
  std::vector<double> out(q.size());
  const auto& r = grid.nodes();
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = r[i] * dphi[i] + mass / (2.0 * kPi);
  return out;
}

std::vector<double> StationaryProfile::mhat() const {
  // -psi = -r phi' is the partial mass over 2pi
  std::vector<double> out(q.size());
  const auto& r = grid.nodes();
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = -r[i] * dphi[i];
  return out;
}

StationaryProfile solve_stationary_profile(double mu, const RadialGrid& grid, const ProfileOptions& opt) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw Error(ErrorKind::InvalidArgument, "mu must lie in [0, 1]");
  const auto& r = grid.nodes();
  auto st = integrate_profile(mu, r, opt);

  StationaryProfile p;
  p.mu = mu;
  p.grid = grid;
  p.options = opt;
  const std::size_t n = r.size();
  p.phi.resize(n);
  p.dphi.resize(n);
  p.q.resize(n);
  p.phi_dmu.resize(n);
  p.dphi_dmu.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.phi[i] = st[i].phi;
    p.dphi[i] = r[i] > 0 ? st[i].psi / r[i] : 0.0;
    p.q[i] = 8.0 * std::exp(st[i].phi - 0.5 * mu * r[i] * r[i]);
    p.phi_dmu[i] = st[i].p;
    p.dphi_dmu[i] = r[i] > 0 ? st[i].pi / r[i] : 0.0;
  }
  const auto& last = st.back();
  p.mass = -2.0 * kPi * last.psi;
  p.second_moment = 2.0 * kPi * last.m2;
  p.dmass = -2.0 * kPi * last.pi;
  p.dsecond_moment = 2.0 * kPi * last.d2;

  p.ordering_violation = check_orderings(p).density;
  if (p.ordering_violation > opt.ordering_tol) {
    throw Error(ErrorKind::GridTooCoarse,
                "profile ordering violated by " + std::to_string(p.ordering_violation));
  }
  return p;
}

OrderingReport check_orderings(const StationaryProfile& p) {
  OrderingReport rep;
  const auto& r = p.grid.nodes();
  const double mu = p.mu;
  auto viol = [](double lhs, double rhs) { return std::max(0.0, lhs - rhs); };
  for (std::size_t i = 1; i < r.size(); ++i) {
    const double x = r[i], x2 = x * x;
    const double q = Q(x);
    const double g = std::exp(-0.5 * mu * x2);
    rep.density = std::max({rep.density, viol(q * g, p.q[i]), viol(p.q[i], q)});
    const double fq = phi_Q(x), fm = p.phi[i];
    rep.potential = std::max({rep.potential, viol(fq - 0.5 * mu * x2, fm - 0.5 * mu * x2),
                              viol(fm - 0.5 * mu * x2, fq), viol(fq, fm), viol(fm, 0.0)});
    const double gq = x * dphi_Q(x), gm = x * p.dphi[i];
    rep.gradient = std::max({rep.gradient, viol(gm - mu * x2, gq), viol(gq, gm), viol(gm, 0.0)});
  }
  return rep;
}

CorrectionT1 solve_T1_potential(const RadialGrid& grid, double quad_tol) {
  const auto& r = grid.nodes();
  const std::size_t n = r.size();
  auto f0 = [](double x) { return 1.0 - 2.0 / (1.0 + x * x); };
  auto f1 = [](double x) {
    const double l = std::log(x);
    return (x * x * l - 2.0 - l) / (1.0 + x * x);
  };
  auto df0 = [](double x) { return 0.5 * x * Q(x); };
  auto df1 = [](double x) {
    const double l = std::log(x), x2 = x * x;
    return (4.0 * x2 * l + x2 * x2 + 4.0 * x2 - 1.0) * Q(x) / (8.0 * x);
  };

  std::vector<double> ga(n, 0.0), gb(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double x3 = r[i] * r[i] * r[i];
    ga[i] = Q(r[i]) * f1(r[i]) * x3;
    gb[i] = f0(r[i]) * Q(r[i]) * x3;
  }
  auto A = cumulative_trapezoid(r, ga);
  auto B = cumulative_trapezoid(r, gb);

  CorrectionT1 out;
  out.grid = grid;
  out.phi_t1.assign(n, 0.0);
  out.dphi_t1.assign(n, 0.0);
  out.t1.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double x = r[i];
    out.phi_t1[i] = -0.5 * f0(x) * A[i] + 0.5 * f1(x) * B[i];
    out.dphi_t1[i] = -0.5 * df0(x) * A[i] + 0.5 * df1(x) * B[i];
    out.t1[i] = Q(x) * (out.phi_t1[i] - 0.5 * x * x);
  }
  const auto ea = trapezoid(r, ga), eb = trapezoid(r, gb);
  const double x = r.back();
  out.quad_error = 0.5 * (std::abs(f0(x)) * ea.error + std::abs(f1(x)) * eb.error);
  const double scale = std::max(1.0, std::abs(out.phi_t1.back()));
  if (out.quad_error > quad_tol * scale) {
    throw Error(ErrorKind::QuadratureFailure,
                "T1 quadrature error estimate " + std::to_string(out.quad_error) + " exceeds tolerance");
  }
  return out;
}

namespace {

double weighted_l2(std::span<const double> r, std::span<const double> f, std::span<const double> w) {
  std::vector<double> g(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) g[i] = 2.0 * kPi * r[i] * f[i] * f[i] / w[i];
  return std::sqrt(trapezoid(r, g).value);
}

}  // namespace

DmuProfile d_mu_profile(double mu, const RadialGrid& grid, const ProfileOptions& opt, double agree_tol) {
  if (!(mu > 0)) throw Error(ErrorKind::InvalidArgument, "d_mu_profile needs mu > 0");
  const auto base = solve_stationary_profile(mu, grid, opt);
  const double h = mu / 100.0;
  const auto plus = solve_stationary_profile(mu + h, grid, opt);
  const auto minus = solve_stationary_profile(mu - h, grid, opt);

  DmuProfile d;
  d.dmu_q = base.dmu_q();
  d.phi_dmu_q = base.phi_dmu;
  const std::size_t n = grid.size();
  d.fd_dmu_q.resize(n);
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.fd_dmu_q[i] = (plus.q[i] - minus.q[i]) / (2.0 * h);
    diff[i] = d.fd_dmu_q[i] - d.dmu_q[i];
  }
  const auto& r = grid.nodes();
  d.rel_l2_diff = weighted_l2(r, diff, base.q) / weighted_l2(r, d.dmu_q, base.q);
  if (!(d.rel_l2_diff <= agree_tol)) {
    throw Error(ErrorKind::InconsistentDerivative,
                "finite-difference and variational d_mu Q differ by " + std::to_string(d.rel_l2_diff));
  }
  return d;
}

ApproxProfile build_corrected_profile(double mu, const RadialGrid& grid, const ProfileOptions& opt) {
  ApproxProfile a;
  a.base = solve_stationary_profile(mu, grid, opt);
  a.mu = mu;
  if (std::abs(a.base.dmass) < 1e-14) {
    throw Error(ErrorKind::DegenerateCorrection, "mass derivative vanishes");
  }
  a.mu_tilde = (a.base.mass - kEightPi) / a.base.dmass;
  a.dmu_q = a.base.dmu_q();
  a.q_tilde.resize(a.dmu_q.size());
  for (std::size_t i = 0; i < a.q_tilde.size(); ++i) a.q_tilde[i] = a.base.q[i] - a.mu_tilde * a.dmu_q[i];
  a.mass = a.base.mass - a.mu_tilde * a.base.dmass;
  a.second_moment = a.base.second_moment - a.mu_tilde * a.base.dsecond_moment;
  a.quadrature_mass = radial_moments(grid.nodes(), a.q_tilde).mass.value;
  return a;
}

Moments mass_and_moments(std::span<const double> field, const RadialGrid& grid, double rel_tol) {
  if (field.size() != grid.size()) throw Error(ErrorKind::InvalidArgument, "field/grid size mismatch");
  for (double v : field) {
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "field has non-finite values");
  }
  Moments m = radial_moments(grid.nodes(), field);
  if (m.tail_mass > 10.0 * rel_tol * std::max(std::abs(m.mass.value), 1e-300)) {
    throw Error(ErrorKind::TailNotResolved,
                "last decade of radius carries mass " + std::to_string(m.tail_mass));
  }
  return m;
}

SigmaReport sigma_extraction(const StationaryProfile& p, const CorrectionT1& t1, double noise_floor) {
  if (!p.grid.same_nodes(t1.grid)) throw Error(ErrorKind::GridMismatch, "sigma needs T1 on the profile grid");
  SigmaReport rep;
  const auto& r = p.grid.nodes();
  rep.sigma.resize(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    rep.sigma[i] = p.phi[i] - phi_Q(r[i]) - p.mu * t1.phi_t1[i];
    const double lg = 0.5 * std::log1p(r[i] * r[i]);
    const double bound = std::min(p.mu * p.mu * r[i] * r[i] * lg, p.mu * lg * lg);
    if (i == 0 || bound < noise_floor * (1.0 + std::abs(p.phi[i]))) continue;
    ++rep.nodes_checked;
    rep.max_ratio = std::max(rep.max_ratio, std::abs(rep.sigma[i]) / bound);
  }
  return rep;
}

}  // namespace critmass
