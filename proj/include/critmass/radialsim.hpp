#pragma once

#include <limits>
#include <string>
#include <vector>

#include "critmass/grid.hpp"

namespace critmass {

enum class Frame { physical, self_similar };
const char* to_string(Frame f);
Frame frame_from_string(const std::string& s);

// m-hat = partial mass / 2pi. In the self-similar frame the radial variable is
// z = x / R(t), R = sqrt(1 + 2t), and time is tau = log R.
struct PartialMassState {
  Frame frame = Frame::physical;
  double time = 0.0;
  RadialGrid grid;
  std::vector<double> mhat;
  double total_mass_hat = 0.0;

  double total_mass() const;
};

enum class Preset {
  critical_theorem,        // (K/mu0) Q(x/sqrt(mu0)) e^{-|x|^2/2}, mass 8pi
  subcritical_scaled,      // Gaussian, M < 8pi
  supercritical,           // Gaussian, M > 8pi
  stationary_selfsimilar,  // n_inf^M, M < 8pi
  compact_bump,            // A (1 - r^2/rho^2)^2 on r < rho
  custom,                  // sampled u0
};
const char* to_string(Preset p);
Preset preset_from_string(const std::string& s);

struct PresetParams {
  Preset preset = Preset::subcritical_scaled;
  double mu0 = 1e-2;
  double mass = 4.0 * 3.14159265358979323846;
  double width = 1.0;  // Gaussian sigma or bump radius
  // (u)_lambda = lambda^{-2} u(x / lambda); partial masses scale as m(r / lambda).
  double scale = 1.0;
  std::vector<double> custom_r, custom_u;
};

PartialMassState init_state(const PresetParams& params, const RadialGrid& grid, Frame frame);

// mu with M(mu) = mass for the stationary self-similar preset.
double stationary_mu_for_mass(double mass);

struct StepInfo {
  int newton_iterations = 0;
  double last_update = 0.0;  // relative size of the final Newton update
};

// Backward Euler on the flux form
//   r m_t = d_r[ r m_r - 2m + m^2/2 ] + drift * r^2 m_r,   drift = 1 (self-similar) or 0,
// with a full Newton solve of the tridiagonal system.
class PartialMassSolver {
 public:
  PartialMassSolver(const RadialGrid& grid, Frame frame);

  StepInfo step(std::vector<double>& mhat, double dt) const;
  // Discrete second moment; its evolution reproduces the virial law exactly.
  double second_moment(const std::vector<double>& mhat) const;
  const RadialGrid& grid() const { return grid_; }
  Frame frame() const { return frame_; }

 private:
  void residual(const std::vector<double>& m, std::vector<double>& F, std::vector<double>& jm,
                std::vector<double>& j0, std::vector<double>& jp) const;

  RadialGrid grid_;
  Frame frame_;
  std::vector<double> rh_, d2_, th_, om_;
};

PartialMassState step_physical(const PartialMassState& s, double dt);
PartialMassState step_selfsimilar(const PartialMassState& s, double dtau);

// u = m-hat_r / r = 2 d m-hat / d(r^2), second order, one-sided at both ends.
std::vector<double> reconstruct_density(const PartialMassState& s, double neg_tol = 1e-8);

struct FreeEnergy {
  double value = 0.0;
  double entropy = 0.0;      // int u log u
  double interaction = 0.0;  // -1/2 int u phi_u
  double confinement = 0.0;  // 1/2 int w |z|^2 (self-similar frame only)
};
FreeEnergy free_energy(const PartialMassState& s, double tail_tol = 1e-8);

enum class StopReason { final_time, peak_threshold, min_mu_proxy, steady_state };
const char* to_string(StopReason r);

struct TimeStepPolicy {
  double dt_initial = 1e-3;
  double growth = 1.05;          // growth factor after an accepted step
  double dt_max = 1e-2;
  double dt_min = 1e-14;         // floor; step errors propagate below it
  double max_peak_change = 0.1;  // relative peak change allowed per step
};

struct StopCriteria {
  double final_time = 1.0;
  double peak_threshold = 1e6;
  double min_mu_proxy = 0.0;
  double steady_tol = 0.0;      // stop once sup|u(T) - u(T - window)| <= steady_tol (0 disables)
  double steady_window = 1.0;
};

struct SimConfig {
  Frame frame = Frame::physical;
  PresetParams init;
  GridSpec grid{20.0, 1e-4, 1.02, 0.05};
  TimeStepPolicy dt;
  StopCriteria stop;
  double output_every = 0.1;
  bool keep_snapshots = false;
};

struct Diagnostics {
  std::vector<double> time, mass, second_moment, free_energy, peak, mu_proxy, steady_change;
};

struct RunResult {
  PartialMassState final_state;
  Diagnostics diagnostics;
  std::vector<PartialMassState> snapshots;  // at output times when requested
  StopReason stop_reason = StopReason::final_time;
  double initial_second_moment = 0.0;
  std::size_t steps = 0;
  std::size_t rejected_steps = 0;
  double wall_seconds = 0.0;
};

RunResult run(const SimConfig& config);
// Same, starting from an explicit state (the preset in config is ignored).
RunResult run_from(const PartialMassState& initial, const SimConfig& config);

struct VirialReport {
  double slope = 0.0;
  double predicted = 0.0;
  double rel_error = 0.0;  // |slope - predicted| / max(|predicted|, 4 M0)
  double max_rel_drift = 0.0;  // max |I - I(0)| / I(0)
};
VirialReport verify_virial(const Diagnostics& d, double mass);

struct ComparisonReport {
  double min_difference = 0.0;  // min over times and nodes of mhat_A - mhat_B
  double at_time = 0.0;
  bool ordered = false;
};
// Runs given as snapshot sequences at matching times on one grid and frame.
ComparisonReport check_comparison(const std::vector<PartialMassState>& a,
                                  const std::vector<PartialMassState>& b, double tol = 1e-8);

// Exact change of variables between frames: same m-hat values on a grid scaled
// by 1/R(t) (physical -> self-similar) or R(t) (self-similar -> physical).
PartialMassState to_self_similar(const PartialMassState& s);
PartialMassState to_physical(const PartialMassState& s);

}  // namespace critmass
