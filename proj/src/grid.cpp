#include "critmass/grid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

namespace critmass {

RadialGrid::RadialGrid(std::vector<double> nodes) : r_(std::move(nodes)) {
  if (r_.size() < 3) throw Error(ErrorKind::InvalidGrid, "grid needs at least 3 nodes");
  if (r_.front() != 0.0) throw Error(ErrorKind::InvalidGrid, "first grid node must be exactly 0");
  for (std::size_t i = 1; i < r_.size(); ++i) {
    if (!(r_[i] > r_[i - 1])) throw Error(ErrorKind::InvalidGrid, "grid nodes must be strictly increasing");
  }
  spec_.r_max = r_.back();
  spec_.dr_min = min_spacing();
  spec_.dr_max = max_spacing();
  spec_.growth = grading_ratio();
}

RadialGrid RadialGrid::geometric(const GridSpec& spec) {
  if (!(spec.r_max > 0 && spec.dr_min > 0 && spec.growth >= 1.0 && spec.dr_max >= spec.dr_min)) {
    throw Error(ErrorKind::InvalidGrid, "invalid grid spec: " + describe(spec));
  }
  std::vector<double> r{0.0};
  double h = spec.dr_min;
  while (r.back() < spec.r_max) {
    r.push_back(r.back() + h);
    h = std::min(h * spec.growth, spec.dr_max);
  }
  // Rescale instead of clipping the last cell: spacing ratios stay exact.
  const double over = r.back() - spec.r_max;
  const double cell = r.back() - r[r.size() - 2];
  if (over > 0.5 * cell && r.size() > 3) r.pop_back();
  const double s = spec.r_max / r.back();
  for (double& x : r) x *= s;
  r.back() = spec.r_max;
  RadialGrid g(std::move(r));
  g.spec_ = spec;
  return g;
}

RadialGrid RadialGrid::for_profile(double mu, double growth, double dr_max) {
  double r_max = 50.0;
  if (mu > 0) r_max = std::max(50.0, 12.0 / std::sqrt(mu));
  return geometric({r_max, 1e-4, growth, dr_max});
}

double RadialGrid::min_spacing() const {
  double m = r_[1] - r_[0];
  for (std::size_t i = 2; i < r_.size(); ++i) m = std::min(m, r_[i] - r_[i - 1]);
  return m;
}

double RadialGrid::max_spacing() const {
  double m = 0;
  for (std::size_t i = 1; i < r_.size(); ++i) m = std::max(m, r_[i] - r_[i - 1]);
  return m;
}

double RadialGrid::grading_ratio() const {
  double q = 1.0;
  for (std::size_t i = 2; i < r_.size(); ++i) {
    q = std::max(q, (r_[i] - r_[i - 1]) / (r_[i - 1] - r_[i - 2]));
  }
  return q;
}

RadialGrid RadialGrid::scaled(double factor) const {
  std::vector<double> r(r_);
  for (double& x : r) x *= factor;
  RadialGrid g(std::move(r));
  return g;
}

bool RadialGrid::same_nodes(const RadialGrid& other, double rel_tol) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (std::abs(r_[i] - other.r_[i]) > rel_tol * std::abs(r_[i])) return false;
  }
  return true;
}

namespace {

double trap_stride(std::span<const double> r, std::span<const double> f, std::size_t stride) {
  double s = 0;
  std::size_t i = 0;
  for (; i + stride < r.size(); i += stride) s += 0.5 * (f[i] + f[i + stride]) * (r[i + stride] - r[i]);
  if (i + 1 < r.size()) {
    // leftover cell(s) when stride does not divide the node count
    const std::size_t last = r.size() - 1;
    s += 0.5 * (f[i] + f[last]) * (r[last] - r[i]);
  }
  return s;
}

}  // namespace

QuadResult trapezoid(std::span<const double> r, std::span<const double> f) {
  if (r.size() != f.size() || r.size() < 2) throw Error(ErrorKind::InvalidArgument, "trapezoid: size mismatch");
  QuadResult q;
  q.value = trap_stride(r, f, 1);
  if (r.size() >= 3) q.error = std::abs(q.value - trap_stride(r, f, 2)) / 3.0;
  return q;
}

Moments radial_moments(std::span<const double> r, std::span<const double> f) {
  const std::size_t n = r.size();
  std::vector<double> g0(n), g2(n);
  for (std::size_t i = 0; i < n; ++i) {
    g0[i] = 2 * M_PI * f[i] * r[i];
    g2[i] = g0[i] * r[i] * r[i];
  }
  Moments m;
  m.mass = trapezoid(r, g0);
  m.second_moment = trapezoid(r, g2);
  // outermost tenth of the radial range
  const double cut = 0.9 * r.back();
  auto it = std::lower_bound(r.begin(), r.end(), cut);
  const std::size_t k = static_cast<std::size_t>(it - r.begin());
  if (k + 1 < n) {
    m.tail_mass = std::abs(trapezoid(r.subspan(k), std::span<const double>(g0).subspan(k)).value);
  }
  return m;
}

std::vector<double> cumulative_trapezoid(std::span<const double> r, std::span<const double> f) {
  std::vector<double> out(r.size(), 0.0);
  for (std::size_t i = 1; i < r.size(); ++i) out[i] = out[i - 1] + 0.5 * (f[i] + f[i - 1]) * (r[i] - r[i - 1]);
  return out;
}

const GaussRule& gauss_legendre(int npts) {
  static std::mutex mu;
  static std::map<int, GaussRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(npts);
  if (it != cache.end()) return it->second;
  // Newton iteration on P_n
  GaussRule rule;
  rule.x.resize(npts);
  rule.w.resize(npts);
  for (int i = 0; i < npts; ++i) {
    double x = -std::cos(M_PI * (i + 0.75) / (npts + 0.5));
    for (int it2 = 0; it2 < 100; ++it2) {
      double p0 = 1, p1 = x;
      for (int k = 2; k <= npts; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      double dp = npts * (x * p1 - p0) / (x * x - 1);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) {
        rule.w[i] = 2.0 / ((1 - x * x) * dp * dp);
        break;
      }
      rule.w[i] = 2.0 / ((1 - x * x) * dp * dp);
    }
    rule.x[i] = x;
  }
  return cache.emplace(npts, std::move(rule)).first->second;
}

std::string describe(const GridSpec& spec) {
  std::ostringstream os;
  os << "geometric(r_max=" << spec.r_max << ", dr_min=" << spec.dr_min << ", growth=" << spec.growth
     << ", dr_max=" << spec.dr_max << ")";
  return os.str();
}

}  // namespace critmass
