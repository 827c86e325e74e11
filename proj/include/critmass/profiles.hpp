#pragma once

#include <array>
#include <span>
#include <vector>

#include "critmass/grid.hpp"

namespace critmass {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kEightPi = 8.0 * kPi;

// Closed-form critical profile: phi_Q = -2 log(1+r^2), Q = 8/(1+r^2)^2.
double phi_Q(double r);
double dphi_Q(double r);
double Q(double r);

struct ProfileOptions {
  double rtol = 1e-10;
  double atol = 1e-16;
  double ordering_tol = 1e-8;  // absolute, on Q-values
};

// State of the augmented profile system at one radius:
//   phi, psi = r phi', m2 = int_0^r t^3 Q_mu dt,
//   p = phi of d_mu Q_mu, pi = r p', d2 = int_0^r t^3 d_mu Q_mu dt.
// Mass up to r is -2 pi psi; mass of d_mu Q_mu up to r is -2 pi pi.
struct ProfileState {
  double phi = 0, psi = 0, m2 = 0, p = 0, pi = 0, d2 = 0;
};

// Integrate the profile system outward to the (sorted, nonnegative) radii.
std::vector<ProfileState> integrate_profile(double mu, std::span<const double> radii,
                                            const ProfileOptions& opt = {});

struct StationaryProfile {
  double mu = 0;
  RadialGrid grid;
  std::vector<double> phi, dphi, q;
  std::vector<double> phi_dmu, dphi_dmu;  // potential of d_mu Q_mu
  double mass = 0;
  double second_moment = 0;
  double dmass = 0;           // M'(mu)
  double dsecond_moment = 0;  // I2'(mu)
  double ordering_violation = 0;
  ProfileOptions options{};

  // |I2 - (2M/mu)(1 - M/8pi)| / I2; NaN at mu = 0.
  double identity_residual() const;
  std::vector<double> dmu_q() const;
  // Lambda Q_mu = 2 Q_mu + r Q_mu'.
  std::vector<double> lambda_q() const;
  // Decaying potential of Lambda Q_mu: r phi' + M/2pi.
  std::vector<double> phi_lambda_q() const;
  // Partial mass / 2pi of Q_mu.
  std::vector<double> mhat() const;
};

StationaryProfile solve_stationary_profile(double mu, const RadialGrid& grid,
                                           const ProfileOptions& opt = {});

struct CorrectionT1 {
  RadialGrid grid;
  std::vector<double> phi_t1, dphi_t1, t1;
  double quad_error = 0;  // Richardson estimate at the last node
};

// Green-function evaluation with f0 = 1 - 2/(1+r^2), f1 = (r^2 log r - 2 - log r)/(1+r^2).
CorrectionT1 solve_T1_potential(const RadialGrid& grid, double quad_tol = 1e-4);

struct DmuProfile {
  std::vector<double> dmu_q, phi_dmu_q;
  std::vector<double> fd_dmu_q;
  double rel_l2_diff = 0;  // relative discrete L^2_{Q_mu} distance
};

DmuProfile d_mu_profile(double mu, const RadialGrid& grid, const ProfileOptions& opt = {},
                        double agree_tol = 1e-3);

struct ApproxProfile {
  StationaryProfile base;
  double mu = 0;
  double mu_tilde = 0;
  std::vector<double> q_tilde;
  std::vector<double> dmu_q;
  double mass = 0;           // 8pi up to rounding, from the ODE accumulators
  double second_moment = 0;  // I2 - mu_tilde I2'
  double quadrature_mass = 0;  // cross-check by trapezoid on the grid
};

ApproxProfile build_corrected_profile(double mu, const RadialGrid& grid,
                                      const ProfileOptions& opt = {});

// Mass and second moment of a radial field with a tail check: throws
// TailNotResolved when the outermost tenth of [0, R_max] carries more than
// 10 * rel_tol of the mass.
Moments mass_and_moments(std::span<const double> field, const RadialGrid& grid,
                         double rel_tol = 1e-8);

struct OrderingReport {
  double density = 0;    // Q e^{-mu r^2/2} <= Q_mu <= Q
  double potential = 0;  // phi_Q - mu r^2/2 < phi_mu - mu r^2/2 < phi_Q < phi_mu < 0
  double gradient = 0;   // r phi_mu' - mu r^2 < r phi_Q' < r phi_mu' < 0
};
// Largest violation of each chain (0 when the chain holds).
OrderingReport check_orderings(const StationaryProfile& p);

// sigma = phi_mu - phi_Q - mu phi_T1 on the profile grid, and
// max |sigma| / min(mu^2 r^2 |log<r>|, mu (log<r>)^2) over the nodes where
// the bound exceeds noise_floor * (1 + |phi|), i.e. where sigma is above the
// integrator's own error.
struct SigmaReport {
  std::vector<double> sigma;
  double max_ratio = 0;
  std::size_t nodes_checked = 0;
};
SigmaReport sigma_extraction(const StationaryProfile& p, const CorrectionT1& t1,
                             double noise_floor = 1e-8);

}  // namespace critmass
