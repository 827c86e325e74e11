// critmass: command-line front end for the profile, simulation, spectral and
// modulation modules. Every run writes a manifest JSON next to its data; a
// manifest is itself a valid --config file for the same subcommand.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "CLI11.hpp"
#include "critmass/io.hpp"
#include "critmass/modulation.hpp"
#include "critmass/profiles.hpp"
#include "critmass/radialsim.hpp"
#include "critmass/spectral.hpp"

using namespace critmass;
namespace fs = std::filesystem;

namespace {

enum Exit : int {
  kOk = 0,
  kUsage = 1,
  kSolver = 2,
  kStep = 3,
  kEigen = 4,
  kCheck = 5,
  kModulation = 6,
  kPartial = 7,
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::MonotonicityLoss:
    case ErrorKind::LinearSolveFailure:
    case ErrorKind::NegativeDensity:
      return kStep;
    case ErrorKind::AssemblyFailure:
    case ErrorKind::EigenSolveFailure:
    case ErrorKind::IndefiniteB:
      return kEigen;
    case ErrorKind::NoBracket:
    case ErrorKind::MultipleRoots:
    case ErrorKind::InsufficientSpan:
    case ErrorKind::EnvelopeViolated:
    case ErrorKind::InsufficientSamples:
      return kModulation;
    case ErrorKind::InvalidArgument:
    case ErrorKind::InvalidGrid:
    case ErrorKind::GridMismatch:
      return kUsage;
    default:
      return kSolver;
  }
}

// JSON config files: {"simulate": {"mu0": 0.01, ...}, "profile": {...}}. A
// manifest (which carries a "subcommand" key) is read through its "config".
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool, bool, std::string) const override {
    Json j = Json::object();
    for (const auto* o : app->get_options()) {
      if (o->get_lnames().empty() || o->get_lnames().front() == "help") continue;
      j[o->get_lnames().front()] = o->as<std::string>();
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw CLI::ConversionError(std::string("config: ") + e.what());
    }
    if (j.contains("subcommand")) j = j.at("config");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) return format_number(v.get<double>());
    throw CLI::ConversionError("config values must be scalars or arrays of scalars");
  }

  static void flatten(const Json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        flatten(*it, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array()) {
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(*it));
      }
      out.push_back(std::move(item));
    }
  }
};

// Option values of one app level, flag-keyed (the config file layout).
Json echo_options(const CLI::App* app) {
  Json opts = Json::object();
  for (const auto* o : app->get_options()) {
    if (o->get_lnames().empty() || o->get_lnames().front() == "help" || o->get_lnames().front() == "config") continue;
    const auto& name = o->get_lnames().front();
    if (o->get_type_size() == 0) {  // flags
      opts[name] = o->count() > 0;
      continue;
    }
    auto res = o->count() ? o->results() : std::vector<std::string>{};
    if (res.empty() && !o->get_default_str().empty()) res = {o->get_default_str()};
    if (res.empty()) continue;
    if (o->get_items_expected_max() > 1) {
      opts[name] = res;
    } else {
      opts[name] = res.front();
    }
  }
  return opts;
}

struct Output {
  std::string dir = ".";
  std::string prefix;

  std::string path(const std::string& suffix) const {
    fs::create_directories(dir);
    return (fs::path(dir) / (prefix + suffix)).string();
  }
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void check(RunManifest& m, const std::string& name, bool pass, double value, double bound) {
  m.checks.push_back({name, pass, value, bound});
  std::printf("%-40s %s  value %.6g  bound %.6g\n", name.c_str(), pass ? "PASS" : "FAIL", value, bound);
}

// Finish a subcommand: manifest on disk and the exit code.
int finish(RunManifest& m, const Output& out, int code) {
  const auto path = out.path("_manifest.json");
  m.outputs.push_back(path);
  write_json(path, m.to_json());
  if (code == kOk && !m.all_pass()) code = kCheck;
  return code;
}

std::vector<double> parse_list(const std::vector<std::string>& items) {
  std::vector<double> v;
  for (const auto& s : items) {
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) v.push_back(std::stod(tok));
    }
  }
  return v;
}

// ---- profile ---------------------------------------------------------------

struct ProfileArgs {
  double mu = 0.01;
  double rmax = 0;  // 0: max(50, 12 / sqrt(mu))
  double growth = 1.02, dr_max = 0.5;
  double tol = 1e-10;
};

int cmd_profile(const ProfileArgs& a, RunManifest& m, Output out) {
  out.prefix = out.prefix.empty() ? "profile" : out.prefix;
  const auto t0 = Clock::now();
  const auto grid = a.rmax > 0 ? RadialGrid::geometric({a.rmax, 1e-4, a.growth, a.dr_max})
                               : RadialGrid::for_profile(a.mu, a.growth, a.dr_max);
  m.grid = describe(grid.spec());
  ProfileOptions opt;
  opt.rtol = a.tol;
  m.tolerances = {{"rtol", opt.rtol}, {"atol", opt.atol}, {"ordering_tol", opt.ordering_tol}};
  const auto p = solve_stationary_profile(a.mu, grid, opt);
  const auto ord = check_orderings(p);
  m.timings["solve"] = seconds_since(t0);

  const auto csv = out.path(".csv");
  write_csv(csv, {{"r", grid.nodes()}, {"phi", p.phi}, {"dphi", p.dphi}, {"q", p.q}, {"mhat", p.mhat()}});
  m.outputs.push_back(csv);

  const double res = p.identity_residual();
  Json side = {{"mu", a.mu},
               {"mass", p.mass},
               {"second_moment", p.second_moment},
               {"dmass", p.dmass},
               {"identity_residual", res},
               {"ordering", {{"density", ord.density}, {"potential", ord.potential}, {"gradient", ord.gradient}}},
               {"grid", m.grid}};
  const auto js = out.path(".json");
  write_json(js, side);
  m.outputs.push_back(js);

  std::printf("M(mu) = %.15g\nI2(mu) = %.15g\n", p.mass, p.second_moment);
  if (a.mu > 0) check(m, "second_moment_identity", res <= 1e-6, res, 1e-6);
  const double worst = std::max({ord.density, ord.potential, ord.gradient});
  check(m, "profile_ordering", worst <= opt.ordering_tol, worst, opt.ordering_tol);
  return kOk;
}

// ---- t1 --------------------------------------------------------------------

struct T1Args {
  double rmax = 1e3, growth = 1.005, quad_tol = 1e-4;
};

int cmd_t1(const T1Args& a, RunManifest& m, Output out) {
  out.prefix = out.prefix.empty() ? "t1" : out.prefix;
  const auto t0 = Clock::now();
  const auto grid = RadialGrid::geometric({a.rmax, 1e-4, a.growth, 1e9});
  m.grid = describe(grid.spec());
  m.tolerances = {{"quad_tol", a.quad_tol}};
  const auto t = solve_T1_potential(grid, a.quad_tol);
  m.timings["solve"] = seconds_since(t0);
  const auto csv = out.path(".csv");
  write_csv(csv, {{"r", grid.nodes()}, {"phi_t1", t.phi_t1}, {"dphi_t1", t.dphi_t1}, {"t1", t.t1}});
  m.outputs.push_back(csv);

  const double L = std::log(grid.r_max());
  const double ratio = t.phi_t1.back() / (L * L);
  // phi = a L^2 + b L + c on r >= sqrt(r_max)
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] >= std::sqrt(grid.r_max()) && grid[i] > 1.0) idx.push_back(i);
  }
  double lead = std::nan("");
  if (idx.size() >= 3) {
    Eigen::MatrixXd A(idx.size(), 3);
    Eigen::VectorXd y(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double l = std::log(grid[idx[k]]);
      A.row(k) << l * l, l, 1.0;
      y(k) = t.phi_t1[idx[k]];
    }
    lead = A.colPivHouseholderQr().solve(y)(0);
  }
  const auto js = out.path(".json");
  write_json(js, {{"r_max", grid.r_max()}, {"ratio_log2", ratio}, {"leading_coefficient", lead}, {"quad_error", t.quad_error}});
  m.outputs.push_back(js);
  std::printf("phi_T1(R)/(log R)^2 = %.10g at R = %g\nleading coefficient (fit) = %.10g\n", ratio, grid.r_max(), lead);
  return kOk;
}

// ---- simulate --------------------------------------------------------------

struct SimArgs {
  std::string preset = "critical", init_file, frame;
  double mu0 = 1e-2, mass = 0, mass_factor = 0, width = 1.0, scale = 1.0;
  double t_max = 0, tau_max = 0;
  double peak_threshold = 0, min_mu = 0, steady_tol = -1, steady_window = 1.0;
  double dt_initial = 1e-4, dt_max = 1e-3, dt_growth = 1.05, dt_min = 1e-14, max_peak_change = 0.1;
  double rmax = 0, dr_min = 0, growth = 1.02, dr_max = 0.05;
  double output_every = 0.05;
  bool modulate = false, snapshots = false;
};

SimConfig build_sim_config(const SimArgs& a) {
  SimConfig c;
  c.init.preset = preset_from_string(a.preset);
  const bool critical = c.init.preset == Preset::critical_theorem;
  const bool blowup = c.init.preset == Preset::supercritical;
  // Self-similar variables suit everything except finite-time blowup.
  c.frame = a.frame.empty() ? (blowup ? Frame::physical : Frame::self_similar) : frame_from_string(a.frame);
  c.init.mu0 = a.mu0;
  c.init.width = a.width;
  c.init.scale = a.scale;
  if (a.mass > 0 && a.mass_factor > 0) throw Error(ErrorKind::InvalidArgument, "give --mass or --mass-factor, not both");
  if (a.mass_factor > 0) {
    c.init.mass = a.mass_factor * kEightPi;
  } else if (a.mass > 0) {
    c.init.mass = a.mass;
  } else {
    c.init.mass = blowup ? 1.1 * kEightPi : (c.init.preset == Preset::compact_bump ? kEightPi : 4.0 * kPi);
  }
  if (!a.init_file.empty()) {
    const auto cols = read_csv(a.init_file);
    if (cols.size() < 2) throw Error(ErrorKind::InvalidArgument, "init file needs columns r,u");
    c.init.preset = Preset::custom;
    c.init.custom_r = cols[0].values;
    c.init.custom_u = cols[1].values;
  }
  if (a.t_max > 0 && a.tau_max > 0) throw Error(ErrorKind::InvalidArgument, "give --t-max or --tau-max, not both");
  const bool ss = c.frame == Frame::self_similar;
  // blowup runs stop on the peak threshold, not on time
  c.stop.final_time = a.t_max > 0 ? a.t_max : a.tau_max > 0 ? a.tau_max : (ss ? 10.0 : blowup ? 100.0 : 1.0);
  c.stop.peak_threshold = a.peak_threshold > 0 ? a.peak_threshold : (ss ? 1e300 : 1e6);
  c.stop.min_mu_proxy = a.min_mu;
  const bool sub = c.init.preset == Preset::subcritical_scaled || c.init.preset == Preset::stationary_selfsimilar;
  c.stop.steady_tol = a.steady_tol >= 0 ? a.steady_tol : (ss && sub ? 1e-6 : 0.0);
  c.stop.steady_window = a.steady_window;
  if (ss && sub && a.t_max <= 0 && a.tau_max <= 0) c.stop.final_time = 30.0;
  c.dt.dt_initial = a.dt_initial;
  c.dt.dt_max = a.dt_max;
  c.dt.growth = a.dt_growth;
  c.dt.dt_min = a.dt_min;
  c.dt.max_peak_change = a.max_peak_change;
  const double dr_min = a.dr_min > 0 ? a.dr_min : (critical ? 1e-9 : 1e-4);
  const double rmax = a.rmax > 0 ? a.rmax : (ss ? (critical ? 12.0 : 20.0) : 20.0);
  c.grid = {rmax, dr_min, a.growth, a.dr_max};
  c.output_every = a.output_every;
  c.keep_snapshots = a.modulate || a.snapshots;
  return c;
}

int cmd_simulate(const SimArgs& a, RunManifest& m, Output out) {
  out.prefix = out.prefix.empty() ? "simulate" : out.prefix;
  const auto cfg = build_sim_config(a);
  m.resolved = to_json(cfg);
  m.grid = describe(cfg.grid);
  m.tolerances = {{"max_peak_change", cfg.dt.max_peak_change}, {"steady_tol", cfg.stop.steady_tol}};
  const auto t0 = Clock::now();
  const auto res = run(cfg);
  m.timings["run"] = seconds_since(t0);
  m.timings["steps"] = res.steps;

  const auto& d = res.diagnostics;
  const auto diag = out.path("_diagnostics.csv");
  write_csv(diag, {{"time", d.time},
                   {"mass", d.mass},
                   {"second_moment", d.second_moment},
                   {"free_energy", d.free_energy},
                   {"peak", d.peak},
                   {"mu_proxy", d.mu_proxy},
                   {"steady_change", d.steady_change}});
  m.outputs.push_back(diag);
  const auto fin = out.path("_final.csv");
  write_csv(fin, {{"r", res.final_state.grid.nodes()},
                  {"mhat", res.final_state.mhat},
                  {"u", reconstruct_density(res.final_state, 1e300)}});
  m.outputs.push_back(fin);
  if (cfg.keep_snapshots) {
    const auto sp = out.path("_snapshots.csv");
    write_snapshots(sp, res.snapshots);
    m.outputs.push_back(sp);
  }
  std::printf("stop: %s at %s = %.10g after %zu steps (%zu rejected)\n", to_string(res.stop_reason),
              cfg.frame == Frame::physical ? "t" : "tau", res.final_state.time, res.steps, res.rejected_steps);

  const double M = cfg.init.preset == Preset::custom ? res.final_state.total_mass() : cfg.init.mass;
  if (cfg.init.preset == Preset::supercritical && cfg.frame == Frame::physical) {
    const double tmax = 2.0 * kPi * res.initial_second_moment / (M * (M - kEightPi));
    m.resolved["t_max_bound"] = tmax;
    check(m, "blowup_certified", res.stop_reason == StopReason::peak_threshold, d.peak.back(),
          cfg.stop.peak_threshold);
    check(m, "t_stop_below_bound", res.final_state.time <= tmax, res.final_state.time, tmax);
  }
  if (cfg.stop.steady_tol > 0) {
    check(m, "steady_state_reached", res.stop_reason == StopReason::steady_state, d.steady_change.back(),
          cfg.stop.steady_tol);
  }
  if (cfg.frame == Frame::physical && res.stop_reason == StopReason::final_time && d.time.size() >= 5) {
    const auto v = verify_virial(d, M);
    check(m, "virial_slope", v.rel_error <= 1e-2, v.rel_error, 1e-2);
  }

  if (a.modulate) {
    const auto t1 = Clock::now();
    const auto series = decompose_run(res.snapshots);
    Column tau{"tau", {}}, t{"t", {}}, s{"s", {}}, mu{"mu", {}}, lam{"lambda", {}}, ne{"norm_eps_sq", {}},
        nw{"norm_eps_weighted_sq", {}}, gp{"grad_phi_eps_sq", {}}, ep{"energy_pair", {}}, al{"alpha_mu", {}},
        mr{"mass_residual", {}}, orr{"moment_residual", {}};
    for (const auto& x : series) {
      tau.values.push_back(x.frames.tau);
      t.values.push_back(x.frames.t);
      s.values.push_back(x.frames.s);
      mu.values.push_back(x.mu);
      lam.values.push_back(x.lambda);
      ne.values.push_back(x.norm_eps_sq);
      nw.values.push_back(x.norm_eps_weighted_sq);
      gp.values.push_back(x.grad_phi_eps_sq);
      ep.values.push_back(x.energy_pair);
      al.values.push_back(x.alpha_mu);
      mr.values.push_back(x.mass_residual);
      orr.values.push_back(x.moment_residual);
    }
    const auto mp = out.path("_modulation.csv");
    write_csv(mp, {tau, t, s, mu, lam, ne, nw, gp, ep, al, mr, orr});
    m.outputs.push_back(mp);
    m.timings["modulation"] = seconds_since(t1);

    const auto law = track_mu_law(series, res.initial_second_moment);
    Json lj = {{"window", {law.s_lo, law.s_hi}},
               {"window_samples", law.window_samples},
               {"sup_deviation", law.sup_deviation},
               {"c_prime_max", law.c_prime_max},
               {"c_prime_early", law.c_prime_early},
               {"c_prime_late", law.c_prime_late},
               {"c_prime_fit", law.c_prime_fit},
               {"mus_max_rel_error", law.mus_max_rel_error},
               {"moment_remainder_max", law.moment_remainder_max},
               {"lambda_error_first", law.lambda_error_first},
               {"lambda_error_last", law.lambda_error_last},
               {"mu_t_ratio_last", law.mu_t_ratio_last}};
    const auto lp = out.path("_laws.json");
    write_json(lp, lj);
    m.outputs.push_back(lp);
    // |2 mu s - 1| at the first and last window samples
    double first = std::nan(""), last = std::nan("");
    for (std::size_t k = 0; k < law.s.size(); ++k) {
      if (law.s[k] < law.s_lo || law.s[k] > law.s_hi) continue;
      if (std::isnan(first)) first = std::abs(law.deviation[k]);
      last = std::abs(law.deviation[k]);
    }
    check(m, "mu_law_deviation_decreasing", last < first, last, first);
    check(m, "mu_law_single_constant", law.c_prime_late <= law.c_prime_early, law.c_prime_late, law.c_prime_early);
  }
  return kOk;
}

// ---- spectrum --------------------------------------------------------------

struct SpecArgs {
  double mu = 1e-2, refine = 1.0;
  int mode = 0, nev = 5;
  std::string constraints = "mass";
};

int cmd_spectrum(const SpecArgs& a, RunManifest& m, Output out) {
  out.prefix = out.prefix.empty() ? "spectrum" : out.prefix;
  const auto t0 = Clock::now();
  const auto grid = spectral_grid(a.mu, a.refine);
  m.grid = describe(grid.spec());
  EigenOptions eo;
  eo.nev = a.nev;
  eo.seed = m.seed;
  m.tolerances = {{"ritz_tol", eo.tol}, {"rank_tol", eo.rank_tol}};
  const auto op = assemble_operator(a.mu, grid, a.mode);
  const auto rep = spectral_gap(op, constraint_set(a.constraints), eo);
  m.timings["solve"] = seconds_since(t0);

  Json cs = Json::array();
  for (auto c : rep.constraints) cs.push_back(to_string(c));
  const auto js = out.path(".json");
  write_json(js, {{"mu", rep.mu},
                  {"mode", rep.mode},
                  {"constraints", cs},
                  {"eigenvalues", rep.eigenvalues},
                  {"nu1_over_mu", rep.nu1_over_mu},
                  {"dofs", rep.dofs},
                  {"constraint_rank", rep.constraint_rank},
                  {"grid", rep.grid}});
  m.outputs.push_back(js);
  std::printf("nu1/mu = %.10g (%d dofs, constraint rank %d)\n", rep.nu1_over_mu, rep.dofs, rep.constraint_rank);

  if (a.mode == 0 && a.constraints == "mass") check(m, "gap_mass", rep.nu1_over_mu >= 0.99, rep.nu1_over_mu, 0.99);
  if (a.mode == 0 && a.constraints == "full") check(m, "gap_full_K2", rep.nu1_over_mu > 2.0, rep.nu1_over_mu, 2.0);
  if (a.mode == 1 && a.constraints != "full") {
    const double e = std::abs(rep.nu1_over_mu - 1.0);
    check(m, "mode1_lowest_is_mu", e <= 1e-2, e, 1e-2);
  }
  return kOk;
}

// ---- modulate --------------------------------------------------------------

struct ModArgs {
  std::string snapshot_file, frame = "self-similar";
  double mu = 0, time = 0;
  double rmax = 12, dr_min = 1e-9, growth = 1.02, dr_max = 0.05;
};

Json decomposition_json(const ModulationDecomposition& d) {
  return {{"tau", d.frames.tau},
          {"t", d.frames.t},
          {"s", d.frames.s},
          {"mu", d.mu},
          {"mu_tilde", d.mu_tilde},
          {"lambda", d.lambda},
          {"mu_guess", d.mu_guess},
          {"norm_eps_sq", d.norm_eps_sq},
          {"norm_eps_weighted_sq", d.norm_eps_weighted_sq},
          {"grad_phi_eps_sq", d.grad_phi_eps_sq},
          {"energy_pair", d.energy_pair},
          {"alpha_mu", d.alpha_mu},
          {"alpha_ratio", d.alpha_ratio},
          {"hat_orthogonality", d.hat_orthogonality},
          {"mass_residual", d.mass_residual},
          {"moment_residual", d.moment_residual},
          {"second_moment_y", d.second_moment_y},
          {"evaluations", d.evaluations}};
}

int cmd_modulate(const ModArgs& a, RunManifest& m, Output out) {
  out.prefix = out.prefix.empty() ? "modulate" : out.prefix;
  const Frame frame = frame_from_string(a.frame);
  std::vector<PartialMassState> snaps;
  if (!a.snapshot_file.empty()) {
    const auto cols = read_csv(a.snapshot_file);
    std::map<std::string, const Column*> by;
    for (const auto& c : cols) by[c.name] = &c;
    if (!by.count("r") || !by.count("mhat")) throw Error(ErrorKind::InvalidArgument, "snapshot file needs r and mhat");
    const auto& r = by["r"]->values;
    const auto& mh = by["mhat"]->values;
    const std::vector<double> times = by.count("time") ? by["time"]->values : std::vector<double>(r.size(), a.time);
    std::size_t i = 0;
    while (i < r.size()) {
      std::size_t j = i;
      while (j < r.size() && times[j] == times[i]) ++j;
      PartialMassState s;
      s.frame = frame;
      s.time = times[i];
      s.grid = RadialGrid(std::vector<double>(r.begin() + i, r.begin() + j));
      s.mhat.assign(mh.begin() + i, mh.begin() + j);
      s.total_mass_hat = s.mhat.back();
      snaps.push_back(std::move(s));
      i = j;
    }
  } else if (a.mu > 0) {
    const auto g = RadialGrid::geometric({a.rmax, a.dr_min, a.growth, a.dr_max});
    snaps.push_back(profile_snapshot(a.mu, g, a.time));
    if (frame == Frame::physical) snaps.back() = to_physical(snaps.back());
  } else {
    throw Error(ErrorKind::InvalidArgument, "give --snapshot-file or --mu");
  }
  m.grid = std::to_string(snaps.front().grid.size()) + " nodes on [0, " + format_number(snaps.front().grid.r_max()) + "]";
  const ModulationOptions opt;
  m.tolerances = {{"bracket", opt.bracket}, {"norm_cut", opt.norm_cut}, {"mass_tol", opt.mass_tol}};

  const auto t0 = Clock::now();
  std::vector<ModulationDecomposition> series;
  if (snaps.size() == 1) {
    const auto& s = snaps.front();
    const auto tf = s.frame == Frame::self_similar ? TimeFrames::from_tau(s.time, std::exp(1.0))
                                                   : TimeFrames::from_t(s.time, std::exp(1.0));
    series.push_back(decompose(s, tf, opt));
  } else {
    series = decompose_run(snaps, opt);
  }
  m.timings["decompose"] = seconds_since(t0);

  Json arr = Json::array();
  double worst = 0;
  for (const auto& d : series) {
    arr.push_back(decomposition_json(d));
    worst = std::max({worst, d.mass_residual, d.moment_residual});
  }
  const auto js = out.path(".json");
  write_json(js, arr);
  m.outputs.push_back(js);
  const auto& last = series.back();
  const auto csv = out.path("_eps.csv");
  write_csv(csv, {{"y", last.y}, {"eps", last.eps}});
  m.outputs.push_back(csv);
  std::printf("mu = %.15g  lambda = %.15g  ||eps||^2 = %.6g\n", last.mu, last.lambda, last.norm_eps_sq);

  check(m, "orthogonality", worst <= 1e-10, worst, 1e-10);
  if (a.snapshot_file.empty()) {
    const double e = std::abs(last.mu - a.mu) / a.mu;
    check(m, "round_trip_mu", e <= 1e-8, e, 1e-8);
    check(m, "round_trip_eps", std::sqrt(last.norm_eps_sq) <= 1e-8, std::sqrt(last.norm_eps_sq), 1e-8);
  }
  if (series.size() >= 20) {
    const auto law = track_mu_law(series, PartialMassSolver(snaps.front().grid, frame).second_moment(snaps.front().mhat));
    const auto lp = out.path("_laws.json");
    write_json(lp, {{"c_prime_early", law.c_prime_early}, {"c_prime_late", law.c_prime_late},
                    {"mus_max_rel_error", law.mus_max_rel_error}, {"window_samples", law.window_samples}});
    m.outputs.push_back(lp);
  }
  return kOk;
}

// ---- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string task = "mass-expansion";
  std::vector<std::string> mu;
  int threads = 0;
  double tau_max = 6.0;
};

struct Row {
  std::vector<double> values;
  std::string error;
};

unsigned thread_cap(int requested) {
  unsigned n = requested > 0 ? static_cast<unsigned>(requested) : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CRITMASS_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, static_cast<unsigned>(cap));
  }
  return n;
}

// Points run in parallel; results are stored by index so output order never
// depends on scheduling.
std::vector<Row> run_points(const std::vector<double>& pts, unsigned threads,
                            const std::function<std::vector<double>(double)>& f) {
  std::vector<Row> rows(pts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pts.size(); i = next++) {
      try {
        rows[i].values = f(pts[i]);
      } catch (const std::exception& e) {
        rows[i].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned n = std::min<unsigned>(threads, static_cast<unsigned>(pts.size()));
  for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return rows;
}

int cmd_sweep(const SweepArgs& a, RunManifest& m, Output out) {
  out.prefix = out.prefix.empty() ? "sweep_" + a.task : out.prefix;
  std::vector<double> pts = parse_list(a.mu);
  std::vector<std::string> names;
  std::function<std::vector<double>(double)> f;

  if (a.task == "mass-expansion") {
    if (pts.empty()) pts = {1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
    names = {"mu", "mass", "mass_defect", "two_mu_log_mu", "ratio"};
    f = [](double mu) {
      const auto st = integrate_profile(mu, std::vector<double>{std::max(50.0, 12.0 / std::sqrt(mu))},
                                        ProfileOptions{1e-13, 1e-18, 1e-8});
      const double M = -2.0 * kPi * st.back().psi, x = 2.0 * mu * std::log(mu);
      return std::vector<double>{mu, M, M - kEightPi, x, (M - kEightPi) / x};
    };
  } else if (a.task == "gap") {
    if (pts.empty()) pts = {1e-3, 1e-2, 1e-1};
    names = {"mu", "nu1_over_mu_mass", "K2_full"};
    f = [](double mu) {
      const auto op = assemble_operator(mu, spectral_grid(mu), 0);
      return std::vector<double>{mu, spectral_gap(op, constraint_set("mass")).nu1_over_mu,
                                 spectral_gap(op, constraint_set("full")).nu1_over_mu};
    };
  } else if (a.task == "hardy") {
    if (pts.empty()) pts = {1e-3, 1e-2, 1e-1};
    names = {"mu", "hardy_constant", "nu_min"};
    f = [](double mu) {
      const auto h = hardy_constant(mu, spectral_grid(mu));
      return std::vector<double>{mu, h.constant, h.nu_min};
    };
  } else if (a.task == "mu-law") {
    if (pts.empty()) pts = {1e-2, 3e-3};
    names = {"mu0", "mu_final", "c_prime_early", "c_prime_late", "c_prime_fit", "mus_max_rel_error"};
    const double tau_max = a.tau_max;
    f = [tau_max](double mu0) {
      SimArgs sa;
      sa.mu0 = mu0;
      sa.tau_max = tau_max;
      sa.modulate = true;
      const auto res = run(build_sim_config(sa));
      const auto series = decompose_run(res.snapshots);
      const auto law = track_mu_law(series, res.initial_second_moment, 1e2, std::min(1e5, 0.5 * series.back().frames.s));
      return std::vector<double>{mu0, series.back().mu, law.c_prime_early, law.c_prime_late, law.c_prime_fit,
                                 law.mus_max_rel_error};
    };
  } else {
    throw Error(ErrorKind::InvalidArgument, "unknown sweep task " + a.task);
  }

  const unsigned threads = thread_cap(a.threads);
  m.timings["threads"] = threads;
  const auto t0 = Clock::now();
  const auto rows = run_points(pts, threads, f);
  m.timings["sweep"] = seconds_since(t0);

  std::vector<Column> cols;
  for (const auto& n : names) cols.push_back({n, {}});
  Json failed = Json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].error.empty()) {
      failed.push_back({{"point", pts[i]}, {"error", rows[i].error}});
      std::fprintf(stderr, "point %g failed: %s\n", pts[i], rows[i].error.c_str());
      continue;
    }
    for (std::size_t c = 0; c < names.size(); ++c) cols[c].values.push_back(rows[i].values[c]);
  }
  const auto csv = out.path(".csv");
  write_csv(csv, cols);
  m.outputs.push_back(csv);

  Json summary = {{"task", a.task}, {"points", pts.size()}, {"failed", failed}};
  const std::size_t ok = cols.front().values.size();
  if (ok > 0 && a.task == "mass-expansion" && ok >= 2) {
    // M - 8pi = a (2 mu log mu) + b mu
    Eigen::MatrixXd A(ok, 2);
    Eigen::VectorXd y(ok);
    for (std::size_t i = 0; i < ok; ++i) {
      A.row(i) << cols[3].values[i], cols[0].values[i];
      y(i) = cols[2].values[i];
    }
    const Eigen::Vector2d c = A.colPivHouseholderQr().solve(y);
    summary["slope"] = c(0);
    summary["linear_remainder"] = c(1);
    check(m, "mass_expansion_slope", std::abs(c(0) - 1.0) <= 0.05, c(0), 1.0);
  } else if (ok > 0 && a.task == "gap") {
    const auto& mass = cols[1].values;
    const auto& full = cols[2].values;
    check(m, "gap_mass_min", *std::min_element(mass.begin(), mass.end()) >= 0.99,
          *std::min_element(mass.begin(), mass.end()), 0.99);
    check(m, "gap_full_min", *std::min_element(full.begin(), full.end()) > 2.0,
          *std::min_element(full.begin(), full.end()), 2.0);
  } else if (ok > 0 && a.task == "hardy") {
    const auto& c = cols[1].values;
    const double band = *std::max_element(c.begin(), c.end()) / *std::min_element(c.begin(), c.end());
    summary["band"] = band;
    check(m, "hardy_band", band < 2.0, band, 2.0);
  } else if (ok > 0 && a.task == "mu-law") {
    for (std::size_t i = 0; i < ok; ++i) {
      char tag[32];
      std::snprintf(tag, sizeof tag, "%g", cols[0].values[i]);
      check(m, std::string("mu_law_single_constant_") + tag, cols[3].values[i] <= cols[2].values[i],
            cols[3].values[i], cols[2].values[i]);
    }
  }
  const auto js = out.path(".json");
  write_json(js, summary);
  m.outputs.push_back(js);
  return failed.empty() ? kOk : kPartial;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"critmass: numerical lab for the radial critical-mass Keller-Segel system"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file (flags override it; a manifest works too)");
  app.require_subcommand(1);
  app.fallthrough();
  Output out;
  std::uint64_t seed = 42;
  app.add_option("--out", out.dir, "output directory")->capture_default_str();
  app.add_option("--prefix", out.prefix, "file name prefix (default: subcommand)");
  app.add_option("--seed", seed, "seed for randomized suites")->capture_default_str();

  ProfileArgs pa;
  auto* profile = app.add_subcommand("profile", "stationary profile Q_mu with its sidecar report");
  profile->add_option("--mu", pa.mu, "profile parameter, 0 for the critical Q")->required()->check(CLI::Range(0.0, 1.0));
  profile->add_option("--rmax", pa.rmax, "outer radius (default max(50, 12/sqrt(mu)))");
  profile->add_option("--growth", pa.growth)->capture_default_str();
  profile->add_option("--dr-max", pa.dr_max)->capture_default_str();
  profile->add_option("--tol", pa.tol, "relative ODE tolerance")->capture_default_str();

  T1Args ta;
  auto* t1 = app.add_subcommand("t1", "first correction potential phi_T1");
  t1->add_option("--rmax", ta.rmax)->capture_default_str();
  t1->add_option("--growth", ta.growth)->capture_default_str();
  t1->add_option("--quad-tol", ta.quad_tol)->capture_default_str();

  SimArgs sa;
  auto* sim = app.add_subcommand("simulate", "partial-mass simulation");
  sim->add_option("--preset", sa.preset, "critical, subcritical, supercritical, stationary, bump")->capture_default_str();
  sim->add_option("--init-file", sa.init_file, "CSV with columns r,u (overrides --preset)");
  sim->add_option("--frame", sa.frame, "physical or self-similar (default by preset)");
  sim->add_option("--mu0", sa.mu0)->capture_default_str();
  sim->add_option("--mass", sa.mass);
  sim->add_option("--mass-factor", sa.mass_factor, "mass in units of 8pi");
  sim->add_option("--width", sa.width)->capture_default_str();
  sim->add_option("--scale", sa.scale)->capture_default_str();
  sim->add_option("--t-max", sa.t_max, "final time in the run's frame");
  sim->add_option("--tau-max", sa.tau_max, "same, for self-similar runs");
  sim->add_option("--peak-threshold", sa.peak_threshold);
  sim->add_option("--min-mu", sa.min_mu);
  sim->add_option("--steady-tol", sa.steady_tol);
  sim->add_option("--steady-window", sa.steady_window)->capture_default_str();
  sim->add_option("--dt-initial", sa.dt_initial)->capture_default_str();
  sim->add_option("--dt-max", sa.dt_max)->capture_default_str();
  sim->add_option("--dt-growth", sa.dt_growth)->capture_default_str();
  sim->add_option("--dt-min", sa.dt_min, "step failures below this dt abort the run")->capture_default_str();
  sim->add_option("--max-peak-change", sa.max_peak_change)->capture_default_str();
  sim->add_option("--rmax", sa.rmax);
  sim->add_option("--dr-min", sa.dr_min);
  sim->add_option("--growth", sa.growth)->capture_default_str();
  sim->add_option("--dr-max", sa.dr_max)->capture_default_str();
  sim->add_option("--output-every", sa.output_every)->capture_default_str();
  sim->add_flag("--modulate", sa.modulate, "decompose every output snapshot");
  sim->add_flag("--snapshots", sa.snapshots, "write all output snapshots");

  SpecArgs pe;
  auto* spec = app.add_subcommand("spectrum", "constrained spectrum of the linearized operator");
  spec->add_option("--mu", pe.mu)->capture_default_str();
  spec->add_option("--mode", pe.mode)->capture_default_str();
  spec->add_option("--constraints", pe.constraints)->check(CLI::IsMember({"none", "mass", "full"}))->capture_default_str();
  spec->add_option("--refine", pe.refine)->capture_default_str();
  spec->add_option("--nev", pe.nev)->capture_default_str();

  ModArgs ma;
  auto* mod = app.add_subcommand("modulate", "decompose snapshots as Q~_mu + eps");
  mod->add_option("--snapshot-file", ma.snapshot_file, "CSV with r,mhat (and optionally time)");
  mod->add_option("--frame", ma.frame)->capture_default_str();
  mod->add_option("--time", ma.time, "snapshot time when the file has none")->capture_default_str();
  mod->add_option("--mu", ma.mu, "decompose the exact profile instead");
  mod->add_option("--rmax", ma.rmax)->capture_default_str();
  mod->add_option("--dr-min", ma.dr_min)->capture_default_str();
  mod->add_option("--growth", ma.growth)->capture_default_str();
  mod->add_option("--dr-max", ma.dr_max)->capture_default_str();

  SweepArgs wa;
  auto* sweep = app.add_subcommand("sweep", "parameter sweeps, parallel across points");
  sweep->add_option("--task", wa.task)->check(CLI::IsMember({"mass-expansion", "gap", "hardy", "mu-law"}))->capture_default_str();
  sweep->add_option("--mu,--grid-over", wa.mu, "comma-separated values");
  sweep->add_option("--threads", wa.threads, "0: hardware concurrency (capped by CRITMASS_THREADS)");
  sweep->add_option("--tau-max", wa.tau_max, "mu-law runs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  RunManifest m;
  m.seed = seed;
  const CLI::App* sub = app.get_subcommands().front();
  m.subcommand = sub->get_name();
  m.config = echo_options(&app);
  m.config[m.subcommand] = echo_options(sub);
  if (out.prefix.empty()) out.prefix = m.subcommand == "sweep" ? "sweep_" + wa.task : m.subcommand;
  int code = kOk;
  try {
    if (sub == profile) code = cmd_profile(pa, m, out);
    if (sub == t1) code = cmd_t1(ta, m, out);
    if (sub == sim) code = cmd_simulate(sa, m, out);
    if (sub == spec) code = cmd_spectrum(pe, m, out);
    if (sub == mod) code = cmd_modulate(ma, m, out);
    if (sub == sweep) code = cmd_sweep(wa, m, out);
  } catch (const Error& e) {
    m.failure = e.what();
    code = exit_code(e.kind());
    std::fprintf(stderr, "%s\n", e.what());
  } catch (const std::exception& e) {
    m.failure = e.what();
    code = kUsage;
    std::fprintf(stderr, "%s\n", e.what());
  }
  return finish(m, out, code);
}
