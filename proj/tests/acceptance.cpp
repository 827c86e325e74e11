// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Optional arguments select criteria by number.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "critmass/modulation.hpp"
#include "critmass/profiles.hpp"
#include "critmass/radialsim.hpp"
#include "critmass/spectral.hpp"

using namespace critmass;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... xs) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, xs...);
  return buf;
}

double ratio_band(const std::vector<double>& v) {
  return *std::max_element(v.begin(), v.end()) / *std::min_element(v.begin(), v.end());
}

Outcome second_moment_identity() {
  double worst = 0;
  for (double mu : {1e-4, 1e-3, 1e-2, 1e-1}) {
    worst = std::max(worst, solve_stationary_profile(mu, RadialGrid::for_profile(mu)).identity_residual());
  }
  return {worst <= 1e-6, fmt("max relative residual %.3e (<= 1e-6)", worst)};
}

Outcome profile_ordering() {
  double worst = 0;
  for (double mu : {1e-4, 1e-3, 1e-2, 1e-1, 0.5, 1.0}) {
    const auto o = check_orderings(solve_stationary_profile(mu, RadialGrid::for_profile(mu)));
    worst = std::max({worst, o.density, o.potential, o.gradient});
  }
  return {worst <= 1e-8, fmt("max violation %.3e (<= 1e-8)", worst)};
}

Outcome mass_expansion() {
  std::vector<double> mus;
  for (double e = -4.0; e <= -2.0 + 1e-12; e += 0.25) mus.push_back(std::pow(10.0, e));
  Eigen::MatrixXd A(mus.size(), 2);
  Eigen::VectorXd y(mus.size());
  for (std::size_t i = 0; i < mus.size(); ++i) {
    const double mu = mus[i];
    const std::vector<double> far{std::max(50.0, 12.0 / std::sqrt(mu))};
    const double M = -2.0 * kPi * integrate_profile(mu, far, {1e-13, 1e-18, 1e-8}).back().psi;
    A.row(i) << 2.0 * mu * std::log(mu), mu;
    y(i) = M - kEightPi;
  }
  const Eigen::Vector2d c = A.colPivHouseholderQr().solve(y);
  const double resid = ((A * c - y).array().abs() / Eigen::Map<Eigen::VectorXd>(mus.data(), mus.size()).array()).maxCoeff();
  return {std::abs(c(0) - 1.0) <= 0.05,
          fmt("slope %.4f (1 +- 0.05), O(mu) coefficient %.3f, max |residual|/mu %.2e", c(0), c(1), resid)};
}

Outcome t1_asymptotics() {
  const auto g = RadialGrid::geometric({1e3, 1e-4, 1.005, 1e9});
  const auto t = solve_T1_potential(g);
  const double L = std::log(1e3);
  const double r = t.phi_t1.back() / (L * L);
  return {std::abs(r - 6.0) <= 0.12, fmt("phi_T1(1e3)/(log 1e3)^2 = %.4f (6 +- 2%%)", r)};
}

Outcome operator_identities() {
  const double mu = 1e-2;
  const auto f = verify_algebraic_identities(mu, identity_grid(mu));
  const auto c = verify_algebraic_identities(mu, identity_grid(mu, 0.5));
  const double fine = std::max({f.dmu_to_lambda, f.lambda_eigen, f.grad_eigen, f.kernel});
  const bool improving = f.dmu_to_lambda < c.dmu_to_lambda && f.lambda_eigen < c.lambda_eigen &&
                         f.grad_eigen < c.grad_eigen && f.kernel < c.kernel;
  return {fine <= 1e-4 && improving,
          fmt("max residual %.2e (<= 1e-4), refinement %s [dmu->Lambda %.1e, Lambda %.1e, grad %.1e, kernel %.1e]", fine,
              improving ? "improves all" : "does NOT improve all", f.dmu_to_lambda, f.lambda_eigen, f.grad_eigen,
              f.kernel)};
}

Outcome spectral_gap_check() {
  bool ok = true;
  std::string d;
  for (double mu : {1e-3, 1e-2, 1e-1}) {
    const auto op = assemble_operator(mu, spectral_grid(mu), 0);
    const double mass = spectral_gap(op, constraint_set("mass")).nu1_over_mu;
    const double k2 = spectral_gap(op, constraint_set("full")).nu1_over_mu;
    const auto fine = assemble_operator(mu, spectral_grid(mu, 2.0), 0);
    const double k2f = spectral_gap(fine, constraint_set("full")).nu1_over_mu;
    const double drift = std::abs(k2f - k2) / k2;
    ok = ok && mass >= 0.99 && k2 > 2.0 && drift <= 1e-2;
    d += fmt("mu=%g: nu1/mu %.3f, K2 %.4f (refined %.4f, %.2f%%); ", mu, mass, k2, k2f, 100 * drift);
  }
  return {ok, d + "need nu1/mu >= 0.99, K2 > 2, drift <= 1%"};
}

Outcome virial() {
  bool ok = true;
  std::string d;
  for (double M : {4 * kPi, 8 * kPi, 16 * kPi}) {
    SimConfig c;
    c.frame = Frame::physical;
    c.init.preset = M > kEightPi ? Preset::supercritical : Preset::subcritical_scaled;
    c.init.mass = M;
    c.grid = {20.0, 1e-4, 1.02, 0.05};
    c.output_every = 0.05;
    c.dt.dt_max = 5e-3;
    if (M == kEightPi) {
      c.init.preset = Preset::compact_bump;
      c.init.width = 2.0;
    }
    if (M > kEightPi) {
      c.init.width = 2.0;
      c.stop.final_time = 0.5;
      c.output_every = 0.025;
    }
    const auto v = verify_virial(run(c).diagnostics, M);
    ok = ok && v.rel_error <= 1e-2;
    if (M == kEightPi) ok = ok && v.max_rel_drift <= 1e-3;
    d += fmt("M=%.0fpi: slope error %.1e", M / kPi, v.rel_error);
    d += M == kEightPi ? fmt(", I drift %.1e; ", v.max_rel_drift) : std::string("; ");
  }
  return {ok, d + "need <= 1%, drift <= 0.1%"};
}

Outcome blowup_bound() {
  SimConfig c;
  c.frame = Frame::physical;
  c.init.preset = Preset::supercritical;
  c.init.mass = 1.1 * kEightPi;
  c.grid = {30.0, 1e-6, 1.02, 0.05};
  c.stop.final_time = 6.0;
  c.dt.dt_max = 1e-2;
  const auto r = run(c);
  const double M = c.init.mass;
  const double tmax = 2 * kPi * r.initial_second_moment / (M * (M - kEightPi));
  const bool ok = r.stop_reason == StopReason::peak_threshold && r.diagnostics.peak.back() >= 1e6 &&
                  r.final_state.time <= tmax;
  return {ok, fmt("peak %.3e at t_stop %.4f, T_max bound %.4f", r.diagnostics.peak.back(), r.final_state.time, tmax)};
}

Outcome subcritical_attractor() {
  SimConfig c;
  c.frame = Frame::self_similar;
  c.init.preset = Preset::subcritical_scaled;
  c.init.mass = 4 * kPi;
  c.grid = {20.0, 1e-4, 1.01, 0.02};
  c.stop.final_time = 30.0;
  c.stop.steady_tol = 1e-6;
  c.output_every = 0.5;
  c.dt.dt_max = 0.05;
  const auto r = run(c);
  // n_inf^M(z) = Q_mu(z / sqrt(mu)) / mu with M(mu) = 4 pi
  const double mu = stationary_mu_for_mass(c.init.mass);
  const auto& z = r.final_state.grid.nodes();
  std::vector<double> y(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) y[i] = z[i] / std::sqrt(mu);
  const auto st = integrate_profile(mu, y, {1e-12, 1e-16, 1e-8});
  const auto w = reconstruct_density(r.final_state);
  double err = 0, peak = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double n = 8.0 * std::exp(st[i].phi - 0.5 * mu * y[i] * y[i]) / mu;
    err = std::max(err, std::abs(w[i] - n));
    peak = std::max(peak, n);
  }
  const bool steady = r.stop_reason == StopReason::steady_state && r.final_state.time <= 30.0;
  return {steady && err / peak <= 1e-3,
          fmt("steady at tau %.2f (%s), sup|w - n_inf|/sup n_inf = %.2e (<= 1e-3)", r.final_state.time,
              steady ? "reached" : "NOT reached", err / peak)};
}

struct CriticalSeries {
  RunResult run;
  std::vector<ModulationDecomposition> series;
};

const CriticalSeries& critical_series() {
  static const CriticalSeries cs = [] {
    SimConfig c;
    c.frame = Frame::self_similar;
    c.init.preset = Preset::critical_theorem;
    c.init.mu0 = 1e-2;
    c.grid = {12.0, 1e-9, 1.02, 0.05};
    c.dt.dt_initial = 1e-4;
    c.dt.dt_max = 1e-3;
    c.stop.final_time = 10.0;
    c.stop.peak_threshold = 1e300;
    c.output_every = 0.05;
    c.keep_snapshots = true;
    CriticalSeries s;
    s.run = run(c);
    s.series = decompose_run(s.run.snapshots);
    return s;
  }();
  return cs;
}

Outcome mu_law() {
  const auto& cs = critical_series();
  const auto law = track_mu_law(cs.series, cs.run.initial_second_moment, 1e2, 1e5, 1e-3);
  const bool single = law.c_prime_late <= law.c_prime_early;
  const bool mus = law.mus_max_rel_error <= 0.1;
  return {single && mus,
          fmt("%zu samples in s in [1e2, 1e5]: C' early %.3f, late %.3f (%s); max |mu_s/mu^2 + 2|/2 = %.3f for mu <= 1e-3 "
              "(<= 0.1)",
              law.window_samples, law.c_prime_early, law.c_prime_late, single ? "single C' holds" : "C' grows",
              law.mus_max_rel_error)};
}

Outcome bootstrap() {
  const auto& cs = critical_series();
  const double tau_end = cs.series.back().frames.tau;
  double e_early = 0, e_late = 0, g_early = 0, g_late = 0;
  for (const auto& d : cs.series) {
    const auto e = energy_diagnostics(d);
    const bool late = d.frames.tau > 2.0 * tau_end / 3.0;
    (late ? e_late : e_early) = std::max(late ? e_late : e_early, e.bootstrap_ratio);
    (late ? g_late : g_early) = std::max(late ? g_late : g_early, e.grad_ratio);
  }
  return {e_late <= e_early && g_late <= g_early,
          fmt("||eps||^2/mu max %.3e early, %.3e late; int|grad phi_eps|^2/mu max %.3e early, %.3e late "
              "(late third must not exceed the first two thirds)",
              e_early, e_late, g_early, g_late)};
}

Outcome comparison() {
  SimConfig c;
  c.frame = Frame::self_similar;
  c.init.preset = Preset::compact_bump;
  c.init.mass = kEightPi;
  c.init.width = 2.0;
  c.grid = {40.0, 1e-9, 1.02, 0.05};
  c.dt.dt_initial = 1e-4;
  c.dt.dt_max = 1e-3;
  c.stop.final_time = 2.0;
  c.stop.peak_threshold = 1e300;
  c.output_every = 0.1;
  const auto sw = corollary_sandwich(c, 2.0, 1e-8);
  const double worst = -std::min(sw.upper.min_difference, sw.lower.min_difference) * 2.0 * kPi;
  return {sw.upper.ordered && sw.lower.ordered,
          fmt("a = %g, %zu output times, largest violation %.2e (<= 1e-8)", sw.a, sw.middle.snapshots.size(),
              std::max(worst, 0.0) + 0.0)};
}

Outcome round_trip() {
  const auto g = RadialGrid::geometric({12.0, 1e-9, 1.02, 0.05});
  double emu = 0, eeps = 0;
  for (double mu : {1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4, 1e-5, 1e-6}) {
    const auto d = decompose(profile_snapshot(mu, g, 0.0), TimeFrames{});
    emu = std::max(emu, std::abs(d.mu - mu) / mu);
    eeps = std::max(eeps, std::sqrt(d.norm_eps_sq));
  }
  return {emu <= 1e-8 && eeps <= 1e-8,
          fmt("mu in [1e-6, 1e-1]: max relative mu error %.2e, max ||eps|| %.2e (both <= 1e-8)", emu, eeps)};
}

Outcome inequality_uniformity() {
  std::vector<double> hardy, sup, grad, l2;
  for (double mu : {1e-3, 1e-2, 1e-1}) {
    const auto g = spectral_grid(mu);
    hardy.push_back(hardy_constant(mu, g).constant);
    const auto p = verify_potential_bounds(mu, g, 100, 42);
    sup.push_back(p.sup_ratio);
    grad.push_back(p.grad_ratio);
    l2.push_back(p.l2_ratio);
  }
  const double bh = ratio_band(hardy), bs = ratio_band(sup), bg = ratio_band(grad), bl = ratio_band(l2);
  return {std::max({bh, bs, bg, bl}) < 2.0,
          fmt("max/min over mu: Hardy %.3f, sup %.3f, grad %.3f, L2 %.3f (each < 2, seed 42)", bh, bs, bg, bl)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"second-moment identity", second_moment_identity},
      {"profile ordering", profile_ordering},
      {"mass expansion", mass_expansion},
      {"T1 asymptotics", t1_asymptotics},
      {"operator identities", operator_identities},
      {"spectral gap", spectral_gap_check},
      {"virial", virial},
      {"supercritical blowup bound", blowup_bound},
      {"subcritical attractor", subcritical_attractor},
      {"critical mu-law", mu_law},
      {"bootstrap diagnostics", bootstrap},
      {"comparison principle", comparison},
      {"modulation round-trip", round_trip},
      {"inequality uniformity", inequality_uniformity},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!pick.empty() && !pick.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %-28s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria failed\n", failed, pick.empty() ? criteria.size() : pick.size());
  return failed == 0 ? 0 : 1;
}
