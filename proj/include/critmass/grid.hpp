#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "critmass/errors.hpp"

namespace critmass {

// Geometric grading: spacing starts at dr_min, grows by `growth` per cell
// and is capped at dr_max. The last node is exactly r_max.
struct GridSpec {
  double r_max = 50.0;
  double dr_min = 1e-4;
  double growth = 1.02;
  double dr_max = 0.5;
};

class RadialGrid {
 public:
  RadialGrid() = default;
  explicit RadialGrid(std::vector<double> nodes);

  static RadialGrid geometric(const GridSpec& spec);
  // Default profile grid: R_max = max(50, 12/sqrt(mu)).
  static RadialGrid for_profile(double mu, double growth = 1.02, double dr_max = 0.5);

  const std::vector<double>& nodes() const { return r_; }
  std::size_t size() const { return r_.size(); }
  double operator[](std::size_t i) const { return r_[i]; }
  double r_max() const { return r_.back(); }
  double min_spacing() const;
  double max_spacing() const;
  // Largest ratio of consecutive spacings (>= 1 means grading outward).
  double grading_ratio() const;
  const GridSpec& spec() const { return spec_; }

  RadialGrid scaled(double factor) const;
  bool same_nodes(const RadialGrid& other, double rel_tol = 0.0) const;

 private:
  std::vector<double> r_;
  GridSpec spec_{};
};

struct QuadResult {
  double value = 0.0;
  double error = 0.0;  // Richardson estimate |T_h - T_2h| / 3
};

// Trapezoid for int f(r) w(r) dr with nodal values, plus a coarse-grid
// (every other node) estimate of the error.
QuadResult trapezoid(std::span<const double> r, std::span<const double> f);

// 2 pi int f r dr and 2 pi int f r^3 dr, i.e. mass and second moment of a
// radial density on the plane.
struct Moments {
  QuadResult mass;
  QuadResult second_moment;
  double tail_mass = 0.0;  // |mass| carried by r in [0.9 R, R]
};
Moments radial_moments(std::span<const double> r, std::span<const double> f);

// Cumulative trapezoid; out[0] = 0.
std::vector<double> cumulative_trapezoid(std::span<const double> r, std::span<const double> f);

// Gauss-Legendre nodes (ascending) and weights on [-1, 1].
struct GaussRule {
  std::vector<double> x;
  std::vector<double> w;
};
const GaussRule& gauss_legendre(int npts);

std::string describe(const GridSpec& spec);

}  // namespace critmass
