#include "critmass/radialsim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>

#include <boost/math/tools/roots.hpp>

#include "critmass/profiles.hpp"

namespace critmass {

const char* to_string(Frame f) { return f == Frame::physical ? "physical" : "self-similar"; }

Frame frame_from_string(const std::string& s) {
  if (s == "physical") return Frame::physical;
  if (s == "self-similar" || s == "self_similar" || s == "selfsimilar") return Frame::self_similar;
  throw Error(ErrorKind::InvalidArgument, "unknown frame '" + s + "'");
}

const char* to_string(Preset p) {
  switch (p) {
    case Preset::critical_theorem: return "critical";
    case Preset::subcritical_scaled: return "subcritical";
    case Preset::supercritical: return "supercritical";
    case Preset::stationary_selfsimilar: return "stationary";
    case Preset::compact_bump: return "bump";
    case Preset::custom: return "custom";
  }
  return "unknown";
}

Preset preset_from_string(const std::string& s) {
  if (s == "critical" || s == "critical_theorem") return Preset::critical_theorem;
  if (s == "subcritical" || s == "subcritical_scaled") return Preset::subcritical_scaled;
  if (s == "supercritical") return Preset::supercritical;
  if (s == "stationary" || s == "stationary_selfsimilar") return Preset::stationary_selfsimilar;
  if (s == "bump" || s == "compact_bump") return Preset::compact_bump;
  if (s == "custom") return Preset::custom;
  throw Error(ErrorKind::InvalidArgument, "unknown preset '" + s + "'");
}

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::final_time: return "final_time";
    case StopReason::peak_threshold: return "peak_threshold";
    case StopReason::min_mu_proxy: return "min_mu_proxy";
    case StopReason::steady_state: return "steady_state";
  }
  return "unknown";
}

double PartialMassState::total_mass() const { return 2.0 * kPi * (mhat.back() - mhat.front()); }

// ---------------------------------------------------------------------------
// initial data

namespace {

// int_0^{s_i} u(t) t dt at increasing s_i, 8-point Gauss per cell.
template <class F>
std::vector<double> cumulative_mass_hat(const std::vector<double>& s, F&& u) {
  const auto& gl = gauss_legendre(8);
  std::vector<double> out(s.size(), 0.0);
  for (std::size_t i = 1; i < s.size(); ++i) {
    const double a = s[i - 1], b = s[i], c = 0.5 * (a + b), h = 0.5 * (b - a);
    double acc = 0;
    for (std::size_t k = 0; k < gl.x.size(); ++k) {
      const double t = c + h * gl.x[k];
      acc += gl.w[k] * u(t) * t;
    }
    out[i] = out[i - 1] + h * acc;
  }
  return out;
}

double profile_mass(double mu) {
  const double R = std::max(50.0, 14.0 / std::sqrt(mu));
  const double r[1] = {R};
  return -2.0 * kPi * integrate_profile(mu, r)[0].psi;
}

}  // namespace

double stationary_mu_for_mass(double mass) {
  if (!(mass > 0.0 && mass < kEightPi)) {
    throw Error(ErrorKind::MassTargetUnreachable, "stationary profile needs 0 < M < 8pi");
  }
  auto f = [&](double lm) { return profile_mass(std::exp(lm)) - mass; };
  double lo = std::log(1e-14), hi = std::log(1e3);
  if (f(lo) < 0 || f(hi) > 0) throw Error(ErrorKind::MassTargetUnreachable, "mass outside the bracket");
  boost::math::tools::eps_tolerance<double> tol(50);
  std::uintmax_t iters = 200;
  auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, tol, iters);
  return std::exp(0.5 * (a + b));
}

PartialMassState init_state(const PresetParams& prm, const RadialGrid& grid, Frame frame) {
  if (!(prm.scale > 0)) throw Error(ErrorKind::InvalidArgument, "scale must be positive");
  std::vector<double> s(grid.nodes());
  for (double& x : s) x /= prm.scale;

  PartialMassState st;
  st.frame = frame;
  st.grid = grid;
  st.mhat.assign(s.size(), 0.0);
  const double two_pi = 2.0 * kPi;

  switch (prm.preset) {
    case Preset::critical_theorem: {
      const double mu0 = prm.mu0;
      if (!(mu0 > 0)) throw Error(ErrorKind::InvalidArgument, "mu0 must be positive");
      // linear in K: one solve fixes the total mass to 8pi
      auto u1 = [mu0](double x) { return Q(x / std::sqrt(mu0)) / mu0 * std::exp(-0.5 * x * x); };
      auto m1 = cumulative_mass_hat(s, u1);
      if (!(m1.back() > 0) || !std::isfinite(m1.back())) {
        throw Error(ErrorKind::MassTargetUnreachable, "cannot normalise the critical datum");
      }
      const double K = kEightPi / two_pi / m1.back();
      for (std::size_t i = 0; i < s.size(); ++i) st.mhat[i] = K * m1[i];
      st.total_mass_hat = kEightPi / two_pi;
      break;
    }
    case Preset::subcritical_scaled:
    case Preset::supercritical: {
      if (prm.preset == Preset::subcritical_scaled && !(prm.mass < kEightPi)) {
        throw Error(ErrorKind::InvalidArgument, "subcritical preset needs M < 8pi");
      }
      if (prm.preset == Preset::supercritical && !(prm.mass > kEightPi)) {
        throw Error(ErrorKind::InvalidArgument, "supercritical preset needs M > 8pi");
      }
      const double sig2 = prm.width * prm.width;
      st.total_mass_hat = prm.mass / two_pi;
      for (std::size_t i = 0; i < s.size(); ++i) st.mhat[i] = -st.total_mass_hat * std::expm1(-0.5 * s[i] * s[i] / sig2);
      break;
    }
    case Preset::stationary_selfsimilar: {
      const double mu = stationary_mu_for_mass(prm.mass);
      std::vector<double> y(s);
      for (double& x : y) x /= std::sqrt(mu);
      const auto ps = integrate_profile(mu, y);
      for (std::size_t i = 0; i < s.size(); ++i) st.mhat[i] = -ps[i].psi;
      st.total_mass_hat = prm.mass / two_pi;
      break;
    }
    case Preset::compact_bump: {
      const double rho2 = prm.width * prm.width;
      st.total_mass_hat = prm.mass / two_pi;
      for (std::size_t i = 0; i < s.size(); ++i) {
        // 1 - (1 - x)^3 expanded; the direct form cancels to 0 near the origin
        const double x = std::min(1.0, s[i] * s[i] / rho2);
        st.mhat[i] = st.total_mass_hat * x * (3.0 - 3.0 * x + x * x);
      }
      break;
    }
    case Preset::custom: {
      const auto& cr = prm.custom_r;
      const auto& cu = prm.custom_u;
      if (cr.size() < 2 || cr.size() != cu.size()) throw Error(ErrorKind::InvalidArgument, "custom data needs r/u samples");
      auto u = [&](double x) {
        if (x >= cr.back()) return 0.0;
        auto it = std::upper_bound(cr.begin(), cr.end(), x);
        if (it == cr.begin()) return cu.front();
        const std::size_t k = static_cast<std::size_t>(it - cr.begin());
        const double t = (x - cr[k - 1]) / (cr[k] - cr[k - 1]);
        return (1 - t) * cu[k - 1] + t * cu[k];
      };
      // trapezoid in r^2 on the (refined) sample grid
      std::vector<double> r2(cr.size()), acc(cr.size(), 0.0);
      for (std::size_t k = 0; k < cr.size(); ++k) r2[k] = cr[k] * cr[k];
      for (std::size_t k = 1; k < cr.size(); ++k) acc[k] = acc[k - 1] + 0.25 * (cu[k] + cu[k - 1]) * (r2[k] - r2[k - 1]);
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double x = s[i];
        if (x >= cr.back()) {
          st.mhat[i] = acc.back();
          continue;
        }
        auto it = std::upper_bound(cr.begin(), cr.end(), x);
        const std::size_t k = it == cr.begin() ? 1 : static_cast<std::size_t>(it - cr.begin());
        const double uk = u(x);
        st.mhat[i] = acc[k - 1] + 0.25 * (uk + cu[k - 1]) * (x * x - r2[k - 1]);
      }
      for (double v : cu) {
        if (v < 0) throw Error(ErrorKind::InvalidArgument, "custom density must be nonnegative");
      }
      st.total_mass_hat = st.mhat.back();
      break;
    }
  }
  st.mhat.front() = 0.0;
  st.mhat.back() = st.total_mass_hat;
  return st;
}

// ---------------------------------------------------------------------------
// scheme

PartialMassSolver::PartialMassSolver(const RadialGrid& grid, Frame frame) : grid_(grid), frame_(frame) {
  const auto& r = grid_.nodes();
  const std::size_t n = r.size();
  rh_.resize(n - 1);
  d2_.resize(n - 1);
  th_.resize(n - 1);
  om_.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    rh_[i] = 0.5 * (r[i] + r[i + 1]);
    d2_[i] = r[i + 1] * r[i + 1] - r[i] * r[i];
    th_[i] = (rh_[i] * rh_[i] - r[i] * r[i]) / d2_[i];
  }
  // dual annuli: int r dr between neighbouring faces
  for (std::size_t i = 1; i + 1 < n; ++i) om_[i] = 0.5 * (rh_[i] * rh_[i] - rh_[i - 1] * rh_[i - 1]);
}

void PartialMassSolver::residual(const std::vector<double>& m, std::vector<double>& F, std::vector<double>& jm,
                                 std::vector<double>& j0, std::vector<double>& jp) const {
  const std::size_t n = m.size(), nf = n - 1;
  const double drift = frame_ == Frame::self_similar ? 1.0 : 0.0;
  std::vector<double> G(nf), gl(nf), gr(nf), P(nf, 0.0), pl(nf, 0.0), pr(nf, 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    const double mm = m[f] + th_[f] * (m[f + 1] - m[f]);
    const double c = 2.0 * rh_[f] * rh_[f] / d2_[f];
    G[f] = c * (m[f + 1] - m[f]) - 2.0 * mm + 0.5 * mm * mm;
    gl[f] = -c + (mm - 2.0) * (1.0 - th_[f]);
    gr[f] = c + (mm - 2.0) * th_[f];
    if (drift != 0.0) {
      const double h2 = rh_[f] * rh_[f];
      if (f + 1 == nf) {
        P[f] = h2 * m[f + 1];
        pr[f] = h2;
      } else {
        P[f] = h2 * mm;
        pl[f] = h2 * (1.0 - th_[f]);
        pr[f] = h2 * th_[f];
      }
    }
  }
  F.assign(n, 0.0);
  jm.assign(n, 0.0);
  j0.assign(n, 0.0);
  jp.assign(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double w = om_[i];
    F[i] = ((G[i] - G[i - 1]) + drift * (P[i] - P[i - 1])) / w - drift * 2.0 * m[i];
    jm[i] = (-gl[i - 1] - drift * pl[i - 1]) / w;
    j0[i] = ((gl[i] - gr[i - 1]) + drift * (pl[i] - pr[i - 1])) / w - drift * 2.0;
    jp[i] = (gr[i] + drift * pr[i]) / w;
  }
}

StepInfo PartialMassSolver::step(std::vector<double>& m, double dt) const {
  const std::size_t n = m.size();
  if (n != grid_.size()) throw Error(ErrorKind::GridMismatch, "state does not match the solver grid");
  const std::vector<double> old = m;
  std::vector<double> F, jm, j0, jp;
  std::vector<double> a(n), b(n), c(n), d(n);
  StepInfo info;
  double prev = 1e300, rel = 1e300;
  for (int it = 0; it < 40; ++it) {
    residual(m, F, jm, j0, jp);
    // Thomas algorithm on the interior unknowns 1..n-2
    for (std::size_t i = 1; i + 1 < n; ++i) {
      a[i] = -dt * jm[i];
      b[i] = 1.0 - dt * j0[i];
      c[i] = -dt * jp[i];
      d[i] = -(m[i] - old[i] - dt * F[i]);
    }
    for (std::size_t i = 2; i + 1 < n; ++i) {
      const double w = a[i] / b[i - 1];
      b[i] -= w * c[i - 1];
      d[i] -= w * d[i - 1];
    }
    double num = 0, den = 1e-300;
    std::vector<double>& dx = d;
    dx[n - 2] /= b[n - 2];
    for (std::size_t i = n - 2; i-- > 1;) dx[i] = (d[i] - c[i] * dx[i + 1]) / b[i];
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (!std::isfinite(dx[i])) throw Error(ErrorKind::LinearSolveFailure, "non-finite Newton update");
      m[i] += dx[i];
      num = std::max(num, std::abs(dx[i]));
      den = std::max(den, std::abs(m[i]));
    }
    rel = num / den;
    info.newton_iterations = it + 1;
    if (rel < 1e-13 || (it >= 3 && rel > 0.5 * prev)) break;
    prev = rel;
  }
  info.last_update = rel;
  if (!(rel < 1e-8)) {
    m = old;
    throw Error(ErrorKind::NonConvergence, "Newton iteration stalled at relative update " + std::to_string(rel));
  }
  const double tol = 1e-12 * std::abs(m.back());
  for (std::size_t i = 1; i < n; ++i) {
    if (m[i] < m[i - 1] - tol || m[i] > m.back() + tol) {
      m = old;
      throw Error(ErrorKind::MonotonicityLoss, "partial mass lost monotonicity at node " + std::to_string(i));
    }
  }
  return info;
}

double PartialMassSolver::second_moment(const std::vector<double>& m) const {
  const std::size_t n = m.size();
  double s = 0;
  for (std::size_t i = 1; i + 1 < n; ++i) s += om_[i] * m[i];
  return 2.0 * kPi * rh_.back() * rh_.back() * m.back() - 4.0 * kPi * s;
}

PartialMassState step_physical(const PartialMassState& s, double dt) {
  if (s.frame != Frame::physical) throw Error(ErrorKind::InvalidArgument, "state is not in the physical frame");
  PartialMassSolver solver(s.grid, Frame::physical);
  PartialMassState out = s;
  solver.step(out.mhat, dt);
  out.time += dt;
  return out;
}

PartialMassState step_selfsimilar(const PartialMassState& s, double dtau) {
  if (s.frame != Frame::self_similar) throw Error(ErrorKind::InvalidArgument, "state is not in the self-similar frame");
  PartialMassSolver solver(s.grid, Frame::self_similar);
  PartialMassState out = s;
  solver.step(out.mhat, dtau);
  out.time += dtau;
  return out;
}

// ---------------------------------------------------------------------------
// density, free energy

namespace {

double density_at_origin(const std::vector<double>& r, const std::vector<double>& m) {
  const double h1 = r[1] * r[1], h2 = r[2] * r[2] - r[1] * r[1];
  const double d = (h1 + h2) / (h1 * h2) * m[1] - h1 / (h2 * (h1 + h2)) * m[2] - (2 * h1 + h2) / (h1 * (h1 + h2)) * m[0];
  return 2.0 * d;
}

}  // namespace

std::vector<double> reconstruct_density(const PartialMassState& st, double neg_tol) {
  const auto& r = st.grid.nodes();
  const auto& m = st.mhat;
  const std::size_t n = r.size();
  std::vector<double> u(n);
  u[0] = density_at_origin(r, m);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h1 = r[i] * r[i] - r[i - 1] * r[i - 1];
    const double h2 = r[i + 1] * r[i + 1] - r[i] * r[i];
    u[i] = 2.0 * (-h2 / (h1 * (h1 + h2)) * m[i - 1] + (h2 - h1) / (h1 * h2) * m[i] + h1 / (h2 * (h1 + h2)) * m[i + 1]);
  }
  {
    const std::size_t k = n - 1;
    const double h1 = r[k] * r[k] - r[k - 1] * r[k - 1];
    const double h2 = r[k - 1] * r[k - 1] - r[k - 2] * r[k - 2];
    u[k] = 2.0 * ((2 * h1 + h2) / (h1 * (h1 + h2)) * m[k] - (h1 + h2) / (h1 * h2) * m[k - 1] +
                  h1 / (h2 * (h1 + h2)) * m[k - 2]);
  }
  const double peak = *std::max_element(u.begin(), u.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (u[i] < -(neg_tol * peak + 1e-12)) {
      throw Error(ErrorKind::NegativeDensity, "reconstructed density " + std::to_string(u[i]) + " at r = " +
                                                  std::to_string(r[i]));
    }
  }
  return u;
}

FreeEnergy free_energy(const PartialMassState& st, double tail_tol) {
  const auto& r = st.grid.nodes();
  const auto& m = st.mhat;
  const std::size_t n = r.size();
  const double total = m.back() - m.front();
  {
    auto it = std::lower_bound(r.begin(), r.end(), 0.9 * r.back());
    const std::size_t k = static_cast<std::size_t>(it - r.begin());
    if (k < n && m.back() - m[k] > 10.0 * tail_tol * total) {
      throw Error(ErrorKind::TailNotResolved, "density not resolved near R_max");
    }
  }
  const auto u = reconstruct_density(st, 1e-6);

  // phi(r) = -[log r m(r) + int_r^R log t dm(t)]
  std::vector<double> J(n, 0.0);
  for (std::size_t k = n - 1; k-- > 1;) J[k] = J[k + 1] + 0.5 * (std::log(r[k]) + std::log(r[k + 1])) * (m[k + 1] - m[k]);
  // first cell, m ~ c t^2: int_0^{r1} log t dm = m1 (log r1 - 1/2)
  J[0] = J[1] + (m[1] - m[0]) * (std::log(r[1]) - 0.5);
  std::vector<double> phi(n);
  phi[0] = -J[0];
  for (std::size_t k = 1; k < n; ++k) phi[k] = -(std::log(r[k]) * m[k] + J[k]);

  FreeEnergy fe;
  const double two_pi = 2.0 * kPi;
  double ent = 0, inter = 0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double dm = m[k + 1] - m[k];
    const double l0 = std::log(std::max(u[k], 1e-300)), l1 = std::log(std::max(u[k + 1], 1e-300));
    if (dm != 0.0) ent += 0.5 * (l0 + l1) * dm;
    inter += 0.5 * (phi[k] + phi[k + 1]) * dm;
  }
  fe.entropy = two_pi * ent;
  fe.interaction = -0.5 * two_pi * inter;
  if (st.frame == Frame::self_similar) {
    PartialMassSolver geo(st.grid, st.frame);
    fe.confinement = 0.5 * geo.second_moment(m);
  }
  fe.value = fe.entropy + fe.interaction + fe.confinement;
  return fe;
}

// ---------------------------------------------------------------------------
// driver

namespace {

struct Recorder {
  const SimConfig& cfg;
  const PartialMassSolver& solver;
  RunResult& res;
  std::deque<std::pair<double, std::vector<double>>> history;

  // returns true when the steady criterion fires
  bool record(const PartialMassState& st) {
    auto& d = res.diagnostics;
    d.time.push_back(st.time);
    d.mass.push_back(st.total_mass());
    d.second_moment.push_back(solver.second_moment(st.mhat));
    double fe = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> u;
    try {
      u = reconstruct_density(st, 1e-6);
      fe = free_energy(st).value;
    } catch (const Error&) {
      if (u.empty()) u.assign(st.mhat.size(), std::numeric_limits<double>::quiet_NaN());
    }
    d.free_energy.push_back(fe);
    d.peak.push_back(u[0]);
    d.mu_proxy.push_back(st.frame == Frame::self_similar ? 8.0 / u[0] : std::numeric_limits<double>::quiet_NaN());
    if (cfg.keep_snapshots) res.snapshots.push_back(st);

    double change = std::numeric_limits<double>::quiet_NaN();
    bool steady = false;
    if (cfg.stop.steady_tol > 0) {
      const double target = st.time - cfg.stop.steady_window;
      const double eps = 1e-9 * std::max(1.0, std::abs(st.time));
      while (history.size() > 1 && history[1].first <= target + eps) history.pop_front();
      if (!history.empty() && std::abs(history.front().first - target) <= eps) {
        change = 0;
        for (std::size_t i = 0; i < u.size(); ++i) change = std::max(change, std::abs(u[i] - history.front().second[i]));
        steady = change <= cfg.stop.steady_tol;
      }
      history.emplace_back(st.time, u);
    }
    d.steady_change.push_back(change);
    return steady;
  }
};

}  // namespace

RunResult run(const SimConfig& config) {
  const auto grid = RadialGrid::geometric(config.grid);
  return run_from(init_state(config.init, grid, config.frame), config);
}

RunResult run_from(const PartialMassState& initial, const SimConfig& cfg) {
  const auto wall0 = std::chrono::steady_clock::now();
  if (!(cfg.output_every > 0) || !(cfg.dt.dt_initial > 0) || !(cfg.dt.dt_max > 0) || !(cfg.dt.dt_min > 0)) {
    throw Error(ErrorKind::InvalidArgument, "time-step policy and output cadence must be positive");
  }
  PartialMassSolver solver(initial.grid, initial.frame);
  RunResult res;
  PartialMassState st = initial;
  res.initial_second_moment = solver.second_moment(st.mhat);
  Recorder rec{cfg, solver, res, {}};
  rec.record(st);

  const auto& r = st.grid.nodes();
  double dt = cfg.dt.dt_initial;
  double next_out = st.time + cfg.output_every;
  double peak = density_at_origin(r, st.mhat);
  const double t_end = cfg.stop.final_time;
  res.stop_reason = StopReason::final_time;

  std::vector<double> trial;
  while (st.time < t_end - 1e-12 * std::max(1.0, std::abs(t_end))) {
    double h = std::min({dt, next_out - st.time, t_end - st.time});
    trial = st.mhat;
    try {
      solver.step(trial, h);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NonConvergence && e.kind() != ErrorKind::MonotonicityLoss &&
          e.kind() != ErrorKind::LinearSolveFailure) {
        throw;
      }
      ++res.rejected_steps;
      dt = 0.5 * h;
      if (dt < cfg.dt.dt_min) {
        throw Error(e.kind(), std::string("dt floor reached at time ") + std::to_string(st.time) + ": " + e.what());
      }
      continue;
    }
    const double new_peak = density_at_origin(r, trial);
    const double change = std::abs(new_peak - peak) / std::max(peak, 1e-300);
    if (change > cfg.dt.max_peak_change && h > cfg.dt.dt_min) {
      ++res.rejected_steps;
      dt = std::max(0.5 * h * cfg.dt.max_peak_change / change, 0.5 * cfg.dt.dt_min);
      if (dt < cfg.dt.dt_min) throw Error(ErrorKind::MonotonicityLoss, "dt floor reached controlling peak growth");
      continue;
    }
    st.mhat.swap(trial);
    st.time += h;
    peak = new_peak;
    ++res.steps;
    if (h >= dt) dt = std::min(dt * cfg.dt.growth, cfg.dt.dt_max);

    const bool at_output = std::abs(st.time - next_out) <= 1e-12 * std::max(1.0, std::abs(st.time));
    bool steady = false;
    if (at_output) {
      st.time = next_out;
      steady = rec.record(st);
      next_out += cfg.output_every;
    }
    if (peak >= cfg.stop.peak_threshold) {
      res.stop_reason = StopReason::peak_threshold;
      break;
    }
    if (st.frame == Frame::self_similar && cfg.stop.min_mu_proxy > 0 && 8.0 / peak <= cfg.stop.min_mu_proxy) {
      res.stop_reason = StopReason::min_mu_proxy;
      break;
    }
    if (steady) {
      res.stop_reason = StopReason::steady_state;
      break;
    }
  }
  if (res.diagnostics.time.back() != st.time) rec.record(st);
  res.final_state = st;
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return res;
}

VirialReport verify_virial(const Diagnostics& d, double mass) {
  const std::size_t n = d.time.size();
  if (n < 10) throw Error(ErrorKind::InsufficientSamples, "virial check needs at least 10 output times");
  double st = 0, si = 0;
  for (std::size_t k = 0; k < n; ++k) {
    st += d.time[k];
    si += d.second_moment[k];
  }
  st /= n;
  si /= n;
  double num = 0, den = 0;
  for (std::size_t k = 0; k < n; ++k) {
    num += (d.time[k] - st) * (d.second_moment[k] - si);
    den += (d.time[k] - st) * (d.time[k] - st);
  }
  VirialReport rep;
  rep.slope = num / den;
  rep.predicted = 4.0 * mass - mass * mass / (2.0 * kPi);
  rep.rel_error = std::abs(rep.slope - rep.predicted) / std::max(std::abs(rep.predicted), 4.0 * mass);
  for (std::size_t k = 0; k < n; ++k) {
    rep.max_rel_drift = std::max(rep.max_rel_drift, std::abs(d.second_moment[k] - d.second_moment[0]) / d.second_moment[0]);
  }
  return rep;
}

ComparisonReport check_comparison(const std::vector<PartialMassState>& a, const std::vector<PartialMassState>& b,
                                  double tol) {
  if (a.size() != b.size() || a.empty()) throw Error(ErrorKind::GridMismatch, "runs have different output counts");
  ComparisonReport rep;
  rep.min_difference = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].frame != b[k].frame || !a[k].grid.same_nodes(b[k].grid)) {
      throw Error(ErrorKind::GridMismatch, "runs do not share grid and frame");
    }
    if (std::abs(a[k].time - b[k].time) > 1e-9 * std::max(1.0, std::abs(a[k].time))) {
      throw Error(ErrorKind::GridMismatch, "runs have different output times");
    }
    for (std::size_t i = 0; i < a[k].mhat.size(); ++i) {
      const double d = a[k].mhat[i] - b[k].mhat[i];
      if (d < rep.min_difference) {
        rep.min_difference = d;
        rep.at_time = a[k].time;
      }
    }
  }
  rep.ordered = rep.min_difference >= -tol;
  return rep;
}

PartialMassState to_self_similar(const PartialMassState& s) {
  if (s.frame != Frame::physical) throw Error(ErrorKind::InvalidArgument, "state already self-similar");
  const double R = std::sqrt(1.0 + 2.0 * s.time);
  PartialMassState out = s;
  out.frame = Frame::self_similar;
  out.time = std::log(R);
  out.grid = s.grid.scaled(1.0 / R);
  return out;
}

PartialMassState to_physical(const PartialMassState& s) {
  if (s.frame != Frame::self_similar) throw Error(ErrorKind::InvalidArgument, "state already physical");
  const double R = std::exp(s.time);
  PartialMassState out = s;
  out.frame = Frame::physical;
  out.time = 0.5 * (R * R - 1.0);
  out.grid = s.grid.scaled(R);
  return out;
}

}  // namespace critmass
