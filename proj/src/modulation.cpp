#include "critmass/modulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/tools/roots.hpp>

namespace critmass {

namespace {

constexpr double kTwoPi = 2.0 * kPi;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double trap(const std::vector<double>& x, const std::vector<double>& f, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) s += 0.5 * (x[i + 1] - x[i]) * (f[i] + f[i + 1]);
  return s;
}

// 2pi int f y dy over the first n nodes
double plane(const std::vector<double>& y, std::vector<double> f, std::size_t n) {
  for (std::size_t i = 0; i < f.size(); ++i) f[i] *= y[i];
  return kTwoPi * trap(y, f, n);
}

PartialMassState as_self_similar(const PartialMassState& s) {
  return s.frame == Frame::self_similar ? s : to_self_similar(s);
}

// d log mu / dtau at sample k (one-sided at the ends)
double log_slope(const std::vector<double>& tau, const std::vector<double>& mu, std::size_t k) {
  const std::size_t n = tau.size();
  if (k == 0) return std::log(mu[1] / mu[0]) / (tau[1] - tau[0]);
  if (k + 1 == n) return std::log(mu[n - 1] / mu[n - 2]) / (tau[n - 1] - tau[n - 2]);
  const double h0 = tau[k] - tau[k - 1], h1 = tau[k + 1] - tau[k];
  const double d0 = std::log(mu[k] / mu[k - 1]) / h0, d1 = std::log(mu[k + 1] / mu[k]) / h1;
  return (h1 * d0 + h0 * d1) / (h0 + h1);
}

}  // namespace

TimeFrames TimeFrames::from_tau(double tau, double s) {
  TimeFrames f;
  f.tau = tau;
  f.R = std::exp(tau);
  f.t = 0.5 * std::expm1(2.0 * tau);
  f.s = s;
  return f;
}

TimeFrames TimeFrames::from_t(double t, double s) {
  TimeFrames f;
  f.t = t;
  f.R = std::sqrt(1.0 + 2.0 * t);
  f.tau = 0.5 * std::log1p(2.0 * t);
  f.s = s;
  return f;
}

RescaledProfile rescaled_profile(double mu, const RadialGrid& zgrid, const ProfileOptions& opt) {
  if (!(mu > 0.0 && mu <= 1.0)) throw Error(ErrorKind::ProfileMissing, "mu outside (0, 1]");
  RescaledProfile p;
  p.mu = mu;
  const double sq = std::sqrt(mu);
  p.y.resize(zgrid.size());
  for (std::size_t i = 0; i < zgrid.size(); ++i) p.y[i] = zgrid[i] / sq;
  std::vector<double> radii = p.y;
  const double far = std::max(12.0 / sq, 50.0);
  if (far > radii.back()) radii.push_back(far);
  const auto st = integrate_profile(mu, radii, opt);

  p.mass = -kTwoPi * st.back().psi;
  p.dmass = -kTwoPi * st.back().pi;
  p.mu_tilde = (p.mass - kEightPi) / p.dmass;
  const std::size_t n = p.y.size();
  p.mhat.resize(n);
  p.q.resize(n);
  p.q_tilde.resize(n);
  p.phi_lambda.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y2 = p.y[i] * p.y[i];
    p.mhat[i] = -st[i].psi + p.mu_tilde * st[i].pi;
    p.q[i] = 8.0 * std::exp(st[i].phi - 0.5 * mu * y2);
    p.q_tilde[i] = p.q[i] - p.mu_tilde * p.q[i] * (st[i].p - 0.5 * y2);
    p.phi_lambda[i] = st[i].psi + p.mass / kTwoPi;
  }
  return p;
}

PartialMassState profile_snapshot(double mu, const RadialGrid& zgrid, double tau, const ModulationOptions& opt) {
  const auto p = rescaled_profile(mu, zgrid, opt.profile);
  PartialMassState s;
  s.frame = Frame::self_similar;
  s.time = tau;
  s.grid = zgrid;
  s.mhat = p.mhat;
  s.total_mass_hat = p.mhat.back();
  return s;
}

double modulation_function(const PartialMassState& snapshot, double mu, const ModulationOptions& opt) {
  const auto s = as_self_similar(snapshot);
  const PartialMassSolver geo(s.grid, Frame::self_similar);
  const auto p = rescaled_profile(mu, s.grid, opt.profile);
  // z-moments divided by mu are y-moments
  return (geo.second_moment(s.mhat) - geo.second_moment(p.mhat)) / mu;
}

ModulationDecomposition decompose(const PartialMassState& snapshot, const TimeFrames& frames,
                                  const ModulationOptions& opt) {
  const auto s = as_self_similar(snapshot);
  if (std::abs(s.total_mass() - kEightPi) > opt.mass_tol * kEightPi) {
    throw Error(ErrorKind::InvalidArgument, "snapshot mass is not 8pi: " + std::to_string(s.total_mass()));
  }
  ModulationDecomposition d;
  d.frames = frames;
  const auto w = reconstruct_density(s);
  d.mu_guess = 8.0 / w[0];

  int evals = 0;
  auto F = [&](double mu) {
    ++evals;
    return modulation_function(s, mu, opt);
  };
  const int n = std::max(opt.scan_points, 2);
  const double lo = d.mu_guess * (1.0 - opt.bracket), hi = std::min(d.mu_guess * (1.0 + opt.bracket), 1.0);
  std::vector<double> grid(n), vals(n);
  int changes = 0;
  std::size_t where = 0;
  for (int k = 0; k < n; ++k) {
    grid[k] = lo + (hi - lo) * k / (n - 1);
    vals[k] = F(grid[k]);
    if (vals[k] == 0.0) vals[k] = std::numeric_limits<double>::min();
    if (k > 0 && (vals[k - 1] < 0) != (vals[k] < 0)) {
      ++changes;
      where = static_cast<std::size_t>(k - 1);
    }
  }
  if (changes == 0) {
    throw Error(ErrorKind::NoBracket, "F(mu) keeps one sign on [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  if (changes > 1) throw Error(ErrorKind::MultipleRoots, std::to_string(changes) + " sign changes in the bracket");

  std::uintmax_t iters = 100;
  const auto root = boost::math::tools::toms748_solve(F, grid[where], grid[where + 1], vals[where], vals[where + 1],
                                                      boost::math::tools::eps_tolerance<double>(50), iters);
  d.mu = 0.5 * (root.first + root.second);
  d.evaluations = evals;
  d.lambda = std::sqrt(d.mu) * frames.R;

  // eps from the partial-mass difference, so profile snapshots give eps = 0
  const auto p = rescaled_profile(d.mu, s.grid, opt.profile);
  d.mu_tilde = p.mu_tilde;
  d.y = p.y;
  const std::size_t m = d.y.size();
  PartialMassState ps = s;
  ps.mhat = p.mhat;
  const auto wp = reconstruct_density(ps);
  std::vector<double> mh(m);
  d.eps.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    d.eps[i] = d.mu * (w[i] - wp[i]);
    mh[i] = s.mhat[i] - p.mhat[i];
  }
  const PartialMassSolver geo(s.grid, Frame::self_similar);
  d.second_moment_y = geo.second_moment(s.mhat) / d.mu;
  d.mass_residual = std::abs(mh.back()) * kTwoPi / kEightPi;
  d.moment_residual = std::abs(d.second_moment_y - geo.second_moment(p.mhat) / d.mu) / d.second_moment_y;

  std::size_t cut = 0;
  while (cut < m && s.grid[cut] <= opt.norm_cut) ++cut;
  cut = std::max<std::size_t>(cut, 2);
  std::vector<double> f(m), fw(m);
  const bool weighted = frames.t >= 1.0;
  const double wscale = weighted ? 1.0 / (2.0 * frames.t * std::log1p(2.0 * frames.t)) : 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    f[i] = d.eps[i] * d.eps[i] / p.q[i];
    fw[i] = weighted ? f[i] * std::exp(std::min(d.y[i] * d.y[i] * wscale, 700.0)) : 0.0;
  }
  d.norm_eps_sq = plane(d.y, f, cut);
  d.norm_eps_weighted_sq = weighted ? plane(d.y, fw, cut) : kNaN;

  // |grad phi_eps| = mhat_eps / y; the ratio dy/y is scale free, so use z
  const auto& z = s.grid.nodes();
  std::vector<double> g(m, 0.0), phi(m, 0.0);
  for (std::size_t i = 1; i < m; ++i) g[i] = mh[i] * mh[i] / z[i];
  d.grad_phi_eps_sq = kTwoPi * trap(z, g, m);
  // decaying potential phi_eps(y) = int_y^inf mhat_eps / t dt
  for (std::size_t i = m - 1; i-- > 0;) {
    const double a = i == 0 ? 0.0 : mh[i] / z[i];
    phi[i] = phi[i + 1] + 0.5 * (z[i + 1] - z[i]) * (a + mh[i + 1] / z[i + 1]);
  }
  d.energy_pair = d.norm_eps_sq - d.grad_phi_eps_sq;

  // eps = alpha Lambda Q + eps_hat with (phi_LQ Q, M eps_hat) = 0, using
  // M Lambda Q = 2 - M/2pi - mu |y|^2.
  std::vector<double> a1(m), a2(m), den(m), lq(m), ehat(m), phihat(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double y2 = d.y[i] * d.y[i];
    a1[i] = p.phi_lambda[i] * d.eps[i];
    a2[i] = p.phi_lambda[i] * p.q[i] * phi[i];
    den[i] = p.phi_lambda[i] * p.q[i] * (2.0 - p.mass / kTwoPi - d.mu * y2);
  }
  const double num = plane(d.y, a1, m) - plane(d.y, a2, m);
  const double dd = plane(d.y, den, m);
  d.alpha_mu = num / dd;
  d.alpha_ratio = d.grad_phi_eps_sq > 0 ? std::abs(d.alpha_mu) / std::sqrt(d.grad_phi_eps_sq) : 0.0;
  // independent evaluation of the split from the explicit eps_hat
  const double psi_shift = p.mass / kTwoPi;
  for (std::size_t i = 0; i < m; ++i) {
    const double y2 = d.y[i] * d.y[i];
    const double psi = p.phi_lambda[i] - psi_shift;
    lq[i] = p.q[i] * (2.0 + psi - d.mu * y2);
    ehat[i] = d.eps[i] - d.alpha_mu * lq[i];
    phihat[i] = phi[i] - d.alpha_mu * p.phi_lambda[i];
    a1[i] = p.phi_lambda[i] * p.q[i] * (ehat[i] / p.q[i] - phihat[i]);
    a2[i] = std::abs(p.phi_lambda[i] * ehat[i]) + std::abs(p.phi_lambda[i] * p.q[i] * phihat[i]);
  }
  const double scale = plane(d.y, a2, m);
  d.hat_orthogonality = scale > 0 ? std::abs(plane(d.y, a1, m)) / scale : 0.0;
  return d;
}

std::vector<ModulationDecomposition> decompose_run(const std::vector<PartialMassState>& snapshots,
                                                   const ModulationOptions& opt) {
  if (snapshots.empty()) return {};
  std::vector<TimeFrames> tf(snapshots.size());
  for (std::size_t k = 0; k < snapshots.size(); ++k) {
    tf[k] = snapshots[k].frame == Frame::self_similar ? TimeFrames::from_tau(snapshots[k].time, 0)
                                                      : TimeFrames::from_t(snapshots[k].time, 0);
  }
  if (std::abs(tf[0].tau) > 1e-12) throw Error(ErrorKind::InvalidArgument, "series must start at tau = 0 (s(0) = e)");
  std::vector<ModulationDecomposition> out;
  out.reserve(snapshots.size());
  double s = std::exp(1.0);
  for (std::size_t k = 0; k < snapshots.size(); ++k) {
    if (k > 0) {
      const double h = tf[k].tau - tf[k - 1].tau;
      if (!(h > 0)) throw Error(ErrorKind::InvalidArgument, "snapshot times must increase");
      auto d = decompose(snapshots[k], tf[k], opt);
      const double f0 = 1.0 / out.back().mu, f1 = 1.0 / d.mu;
      const double r = f1 / f0;
      s += std::abs(r - 1.0) < 1e-8 ? 0.5 * h * (f0 + f1) : h * (f1 - f0) / std::log(r);
      d.frames.s = s;
      out.push_back(std::move(d));
    } else {
      tf[0].s = s;
      out.push_back(decompose(snapshots[0], tf[0], opt));
    }
  }
  return out;
}

EnergyReport energy_diagnostics(const ModulationDecomposition& d) {
  return {d.norm_eps_sq / d.mu, d.grad_phi_eps_sq / d.mu, d.energy_pair};
}

MuLawReport track_mu_law(const std::vector<ModulationDecomposition>& series, double initial_second_moment,
                         double s_lo, double s_hi, double mu_small) {
  const std::size_t n = series.size();
  if (n < 20) throw Error(ErrorKind::InsufficientSpan, "need at least 20 decompositions, got " + std::to_string(n));
  const double s_first = series.front().frames.s, s_last = series.back().frames.s;
  if (std::log10(s_last / s_first) < 2.0) {
    throw Error(ErrorKind::InsufficientSpan, "decompositions span less than two decades of s");
  }
  MuLawReport rep;
  rep.s_lo = s_lo;
  rep.s_hi = s_hi;
  std::vector<double> tau(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& d = series[k];
    tau[k] = d.frames.tau;
    rep.s.push_back(d.frames.s);
    rep.mu.push_back(d.mu);
    rep.deviation.push_back(2.0 * d.mu * d.frames.s - 1.0);
    rep.c_prime.push_back(std::abs(rep.deviation.back()) * std::log(d.frames.s));
    const double t = d.frames.t;
    rep.lambda_ratio.push_back(t > 0 ? d.lambda / std::sqrt(initial_second_moment / (kEightPi * std::log1p(2.0 * t)))
                                     : kNaN);
    rep.mu_t_ratio.push_back(t > 0 ? d.mu * (2.0 * t + 1.0) * std::log1p(2.0 * t) * kEightPi /
                                          (2.0 * kPi * initial_second_moment)
                                    : kNaN);
    rep.moment_remainder.push_back(d.second_moment_y + kEightPi * std::log(d.mu));
  }
  for (std::size_t k = 0; k < n; ++k) rep.mus_over_mu2.push_back(log_slope(tau, rep.mu, k));

  const double s_mid = std::sqrt(s_lo * s_hi);
  double sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double s = rep.s[k];
    if (s < s_lo || s > s_hi) continue;
    ++rep.window_samples;
    rep.sup_deviation = std::max(rep.sup_deviation, std::abs(rep.deviation[k]));
    rep.c_prime_max = std::max(rep.c_prime_max, rep.c_prime[k]);
    (s < s_mid ? rep.c_prime_early : rep.c_prime_late) =
        std::max(s < s_mid ? rep.c_prime_early : rep.c_prime_late, rep.c_prime[k]);
    const double x = 1.0 / std::log(s);
    sxx += x * x;
    sxy += x * rep.deviation[k];
  }
  if (rep.window_samples < 2) throw Error(ErrorKind::InsufficientSpan, "no decompositions inside the s window");
  rep.c_prime_fit = sxy / sxx;

  bool first = true;
  for (std::size_t k = 0; k < n; ++k) {
    if (series[k].mu > mu_small) continue;
    rep.mus_max_rel_error = std::max(rep.mus_max_rel_error, std::abs(rep.mus_over_mu2[k] + 2.0) / 2.0);
    rep.moment_remainder_max = std::max(rep.moment_remainder_max, std::abs(rep.moment_remainder[k]));
    const double e = std::abs(rep.lambda_ratio[k] - 1.0);
    if (first) rep.lambda_error_first = e;
    first = false;
    rep.lambda_error_last = e;
    rep.mu_t_ratio_last = rep.mu_t_ratio[k];
  }
  return rep;
}

EnvelopeReport envelope_check(const std::vector<PartialMassState>& snapshots, double i_fit, double t_min,
                              double cap) {
  struct Sample {
    double d, r2, t, lam2;
  };
  std::vector<Sample> all;
  for (const auto& snap : snapshots) {
    const PartialMassState s = snap.frame == Frame::physical ? snap : to_physical(snap);
    if (s.time < t_min || s.time <= 1.0) continue;
    const double lam2 = i_fit / std::log1p(2.0 * s.time);
    for (std::size_t i = 0; i < s.mhat.size(); ++i) {
      all.push_back({kEightPi - kTwoPi * s.mhat[i], s.grid[i] * s.grid[i], s.time, lam2});
    }
  }
  if (all.empty()) throw Error(ErrorKind::InsufficientSamples, "no snapshots past t_min");
  const double t_split = 0.5 * (all.front().t + all.back().t);

  auto holds = [](const Sample& x, double c) {
    const double bound = c * x.lam2 * (std::exp(-c * x.r2 / (2.0 * x.t)) + 1.0 / (x.t * std::abs(std::log(x.t)))) /
                         (x.lam2 + x.r2);
    return x.d <= bound;
  };
  // C e^{-C a} is not monotone, so scan C on a fine logarithmic grid.
  auto smallest = [&](auto pick) {
    const int per_decade = 200;
    const int steps = static_cast<int>(std::ceil(std::log10(cap / 1e-3) * per_decade));
    for (int j = 0; j <= steps; ++j) {
      const double c = 1e-3 * std::pow(10.0, static_cast<double>(j) / per_decade);
      bool ok = true;
      for (const auto& x : all) {
        if (pick(x) && !holds(x, c)) {
          ok = false;
          break;
        }
      }
      if (ok) return c;
    }
    throw Error(ErrorKind::EnvelopeViolated, "no envelope constant below " + std::to_string(cap));
  };
  EnvelopeReport rep;
  rep.i_fit = i_fit;
  rep.samples = all.size();
  rep.c1 = 0.0;
  rep.c2 = smallest([](const Sample&) { return true; });
  rep.c2_early = smallest([&](const Sample& x) { return x.t <= t_split; });
  rep.c2_late = smallest([&](const Sample& x) { return x.t > t_split; });
  return rep;
}

SandwichReport corollary_sandwich(const SimConfig& config, double a_start, double tol) {
  const auto grid = RadialGrid::geometric(config.grid);
  const auto u0 = init_state(config.init, grid, config.frame);

  PresetParams upper;
  upper.preset = Preset::compact_bump;
  upper.mass = kEightPi;
  upper.width = 1.0;
  PresetParams lower;
  lower.preset = Preset::critical_theorem;
  lower.mu0 = 1e-2;

  SandwichReport rep;
  PartialMassState s1, s2;
  double a = a_start;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 30) throw Error(ErrorKind::InvalidArgument, "no scale a orders the initial partial masses");
    upper.scale = 1.0 / a;
    lower.scale = a;
    s1 = init_state(upper, grid, config.frame);
    s2 = init_state(lower, grid, config.frame);
    bool ok = true;
    for (std::size_t i = 0; i < grid.size() && ok; ++i) {
      ok = s2.mhat[i] <= u0.mhat[i] + tol && u0.mhat[i] <= s1.mhat[i] + tol;
    }
    if (ok) break;
    a *= 2.0;
  }
  rep.a = a;
  SimConfig cfg = config;
  cfg.keep_snapshots = true;
  const auto r1 = run_from(s1, cfg);
  rep.middle = run_from(u0, cfg);
  const auto r2 = run_from(s2, cfg);
  rep.upper = check_comparison(r1.snapshots, rep.middle.snapshots, tol);
  rep.lower = check_comparison(rep.middle.snapshots, r2.snapshots, tol);
  return rep;
}

}  // namespace critmass
