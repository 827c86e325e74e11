#pragma once

#include <cstddef>
#include <vector>

#include "critmass/profiles.hpp"
#include "critmass/radialsim.hpp"

namespace critmass {

// t (physical), R = sqrt(1 + 2t), tau = log R, and the modulated time s with
// ds/dtau = 1/mu, s(0) = e.
struct TimeFrames {
  double t = 0, R = 1, tau = 0, s = 2.718281828459045;

  static TimeFrames from_tau(double tau, double s);
  static TimeFrames from_t(double t, double s);
};

struct ModulationOptions {
  double bracket = 0.5;      // search mu in mu0 (1 -+ bracket)
  int scan_points = 7;       // sign scan inside the bracket
  // Weighted norms use z <= norm_cut. Past it 1/Q_mu amplifies the roundoff
  // of m-hat (~1e-16 of 8pi) like e^{z^2/2} / mu.
  double norm_cut = 5.0;
  double mass_tol = 1e-6;    // relative, on the snapshot mass
  // Tight enough that M(mu) - 8pi, which is O(mu log mu), keeps three digits
  // down to mu ~ 1e-12.
  ProfileOptions profile{1e-13, 1e-18, 1e-8};
};

// m-hat of Q~_mu(z / sqrt(mu)) on a z-grid, together with what the
// decomposition needs at y = z / sqrt(mu).
struct RescaledProfile {
  double mu = 0, mu_tilde = 0;
  double mass = 0, dmass = 0;  // M(mu), M'(mu)
  std::vector<double> y;
  std::vector<double> mhat;       // partial mass / 2pi of Q~_mu, at y
  std::vector<double> q, q_tilde; // Q_mu, Q~_mu
  std::vector<double> phi_lambda; // potential of Lambda Q_mu: r phi' + M/2pi
};
RescaledProfile rescaled_profile(double mu, const RadialGrid& zgrid, const ProfileOptions& opt);

// Exact profile as a self-similar snapshot at time tau.
PartialMassState profile_snapshot(double mu, const RadialGrid& zgrid, double tau,
                                  const ModulationOptions& opt = {});

struct ModulationDecomposition {
  TimeFrames frames;
  double mu = 0, mu_tilde = 0;
  double lambda = 0;              // sqrt(mu) R
  double mu_guess = 0;            // 8 / w(0)
  std::vector<double> y, eps;     // eps = v - Q~_mu on the snapshot nodes
  double norm_eps_sq = 0;         // int eps^2 / Q_mu, z <= cut
  double norm_eps_weighted_sq = 0;  // same with e^{|y|^2 / (2t log(2t+1))}; NaN for t < 1
  double grad_phi_eps_sq = 0;     // int |grad phi_eps|^2
  double energy_pair = 0;         // (M_mu eps, eps)
  double alpha_mu = 0;
  double alpha_ratio = 0;         // |alpha_mu| / ||grad phi_eps||
  double hat_orthogonality = 0;   // (phi_LQ Q, M eps_hat), relative
  double mass_residual = 0;       // |(eps, 1)| / (8 pi)
  double moment_residual = 0;     // |(eps, |y|^2)| / I2(Q~_mu)
  double second_moment_y = 0;     // (v, |y|^2) = I / (mu R^2)
  int evaluations = 0;
};

// F(mu) = (v - Q~_mu, |y|^2), with both moments taken by the same discrete
// rule on the snapshot's grid.
double modulation_function(const PartialMassState& snapshot, double mu, const ModulationOptions& opt = {});

// Snapshots in the physical frame are first mapped to the self-similar one.
ModulationDecomposition decompose(const PartialMassState& snapshot, const TimeFrames& frames,
                                  const ModulationOptions& opt = {});

// Decompose a run sampled from tau = 0 and integrate s along it. ds/dtau is
// taken exponential between samples, which is exact when mu is.
std::vector<ModulationDecomposition> decompose_run(const std::vector<PartialMassState>& snapshots,
                                                   const ModulationOptions& opt = {});

struct EnergyReport {
  double bootstrap_ratio = 0;  // ||eps||^2 / mu
  double grad_ratio = 0;       // int |grad phi_eps|^2 / mu
  double energy_pair = 0;
};
EnergyReport energy_diagnostics(const ModulationDecomposition& d);

struct MuLawReport {
  std::vector<double> s, mu, deviation;  // deviation = 2 mu s - 1
  std::vector<double> c_prime;           // |deviation| log s
  std::vector<double> mus_over_mu2;      // d log mu / d tau
  std::vector<double> lambda_ratio;      // lambda / sqrt(I / (8 pi log(2t+1)))
  std::vector<double> mu_t_ratio;        // mu / (2 pi I / (M (2t+1) log(2t+1))), M = 8 pi
  std::vector<double> moment_remainder;  // I/(mu R^2) + M log mu
  double s_lo = 0, s_hi = 0;
  std::size_t window_samples = 0;
  double sup_deviation = 0;              // in the window
  double c_prime_max = 0, c_prime_early = 0, c_prime_late = 0;
  double c_prime_fit = 0;                // least squares of deviation against 1/log s
  double mus_max_rel_error = 0;          // |mu_s/mu^2 + 2| / 2 once mu <= mu_small
  double moment_remainder_max = 0;       // sup |remainder| over the run (mu <= mu_small)
  double lambda_error_first = 0, lambda_error_last = 0;
  double mu_t_ratio_last = 0;
};
// Needs >= 20 decompositions spanning >= 2 decades of s (InsufficientSpan).
MuLawReport track_mu_law(const std::vector<ModulationDecomposition>& series, double initial_second_moment,
                         double s_lo = 1e2, double s_hi = 1e5, double mu_small = 1e-3);

struct EnvelopeReport {
  double i_fit = 0;         // lambda_2^2 log(2t+1)
  double c1 = 0;            // lower bound constant; 8pi - m_u >= 0 so 0 works
  double c2 = 0;            // smallest upper constant over the samples
  double c2_early = 0, c2_late = 0;  // same on the two halves of the time window
  std::size_t samples = 0;
};
// 8 pi - m_u <= C lambda^2 (e^{-C r^2/2t} + 1/(t |log t|)) / (lambda^2 + r^2) over
// snapshots with t >= t_min. EnvelopeViolated when no C <= cap works.
EnvelopeReport envelope_check(const std::vector<PartialMassState>& snapshots, double i_fit, double t_min,
                              double cap = 1e6);

// Corollary sandwich: u0 between (u^1_0)_{1/a} (compact bump, more
// concentrated) and (u^2_0)_a (theorem data, more spread). The scale a is
// doubled from a_start until the initial partial masses are ordered; all
// three runs share the config's grid and frame.
struct SandwichReport {
  double a = 0;
  ComparisonReport upper;  // m^1 - m_u
  ComparisonReport lower;  // m_u - m^2
  RunResult middle;
};
SandwichReport corollary_sandwich(const SimConfig& config, double a_start = 2.0, double tol = 1e-8);

}  // namespace critmass
