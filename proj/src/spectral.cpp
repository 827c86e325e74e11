#include "critmass/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace critmass {

RadialGrid spectral_grid(double mu, double refine) {
  if (!(mu > 0.0) || !(refine > 0.0)) throw Error(ErrorKind::InvalidArgument, "spectral grid needs mu > 0, refine > 0");
  // Q_mu varies on the scale r near the core and on 1/sqrt(mu) in the tail,
  // so the spacing grows geometrically and is capped at a fraction of 1/sqrt(mu).
  GridSpec s;
  s.r_max = std::max(30.0, 10.0 / std::sqrt(mu));
  s.dr_min = 1e-3 / refine;
  s.growth = 1.0 + 0.03 / refine;
  s.dr_max = 0.05 / std::sqrt(mu) / refine;
  return RadialGrid::geometric(s);
}

Eigen::VectorXd Tridiagonal::apply(const Eigen::VectorXd& x) const {
  const Eigen::Index n = size();
  Eigen::VectorXd y = diag.cwiseProduct(x);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    y(i) += off(i) * x(i + 1);
    y(i + 1) += off(i) * x(i);
  }
  return y;
}

Eigen::MatrixXd Tridiagonal::dense() const {
  const Eigen::Index n = size();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) m(i, i) = diag(i);
  for (Eigen::Index i = 0; i + 1 < n; ++i) m(i, i + 1) = m(i + 1, i) = off(i);
  return m;
}

namespace {

constexpr int kGaussPoints = 5;

// Profile values at the nodes and at the Gauss points of every cell.
struct ProfileSamples {
  std::vector<double> node_q, node_dphi, node_p, node_dp;
  std::vector<double> gr, gw, gq, gdphi;  // per Gauss point, cell-major
  double mass = 0, dmass = 0;
};

ProfileSamples sample_profile(double mu, const RadialGrid& grid, const ProfileOptions& opt) {
  const auto& r = grid.nodes();
  const auto& rule = gauss_legendre(kGaussPoints);
  const std::size_t n = r.size();
  ProfileSamples s;
  std::vector<double> radii;
  radii.reserve(n + (n - 1) * kGaussPoints);
  for (std::size_t e = 0; e + 1 < n; ++e) {
    radii.push_back(r[e]);
    const double c = 0.5 * (r[e] + r[e + 1]), h = 0.5 * (r[e + 1] - r[e]);
    for (int q = 0; q < kGaussPoints; ++q) {
      s.gr.push_back(c + h * rule.x[q]);
      s.gw.push_back(h * rule.w[q]);
      radii.push_back(s.gr.back());
    }
  }
  radii.push_back(r.back());
  std::vector<ProfileState> st;
  try {
    st = integrate_profile(mu, radii, opt);
  } catch (const Error& e) {
    throw Error(ErrorKind::ProfileMissing, e.what());
  }
  auto qval = [&](double x, const ProfileState& p) { return 8.0 * std::exp(p.phi - 0.5 * mu * x * x); };
  for (std::size_t e = 0, k = 0; e < n; ++e) {
    const ProfileState& p = st[k];
    const double x = radii[k];
    s.node_q.push_back(qval(x, p));
    s.node_dphi.push_back(x > 0 ? p.psi / x : 0.0);
    s.node_p.push_back(p.p);
    s.node_dp.push_back(x > 0 ? p.pi / x : 0.0);
    ++k;
    if (e + 1 == n) break;
    for (int q = 0; q < kGaussPoints; ++q, ++k) {
      s.gq.push_back(qval(radii[k], st[k]));
      s.gdphi.push_back(st[k].psi / radii[k]);
    }
  }
  s.mass = -2.0 * kPi * st.back().psi;
  s.dmass = -2.0 * kPi * st.back().pi;
  return s;
}

// Assemble int weight(r) (c0 psi_i psi_j + c1 psi_i' psi_j' + c2 psi_i psi_j / r^2) r dr
// over active nodes [first, n). weight is given per Gauss point.
template <class W>
Tridiagonal assemble(const RadialGrid& grid, int first, const std::vector<double>& gr,
                     const std::vector<double>& gw, W weight, double c0, double c1, double c2) {
  const auto& r = grid.nodes();
  const Eigen::Index n = static_cast<Eigen::Index>(r.size());
  Tridiagonal t;
  t.diag = Eigen::VectorXd::Zero(n - first);
  t.off = Eigen::VectorXd::Zero(std::max<Eigen::Index>(n - first - 1, 0));
  for (Eigen::Index e = 0; e + 1 < n; ++e) {
    const double h = r[e + 1] - r[e];
    double m00 = 0, m01 = 0, m11 = 0;
    for (int q = 0; q < kGaussPoints; ++q) {
      const std::size_t g = static_cast<std::size_t>(e) * kGaussPoints + q;
      const double x = gr[g];
      const double l = (r[e + 1] - x) / h, rr = (x - r[e]) / h;
      const double w = gw[g] * weight(g) * x;
      const double inv2 = c2 != 0.0 ? c2 / (x * x) : 0.0;
      m00 += w * ((c0 + inv2) * l * l + c1 / (h * h));
      m01 += w * ((c0 + inv2) * l * rr - c1 / (h * h));
      m11 += w * ((c0 + inv2) * rr * rr + c1 / (h * h));
    }
    const Eigen::Index i = e - first, j = e + 1 - first;
    if (i >= 0) t.diag(i) += m00;
    t.diag(j) += m11;
    if (i >= 0) t.off(i) += m01;
  }
  return t;
}

// LDL^T of a symmetric tridiagonal matrix; no pivoting, valid for the SPD
// operators used here.
void tri_factor(const Tridiagonal& t, Eigen::VectorXd& d, Eigen::VectorXd& l) {
  const Eigen::Index n = t.size();
  d.resize(n);
  l.resize(std::max<Eigen::Index>(n - 1, 0));
  d(0) = t.diag(0);
  for (Eigen::Index i = 1; i < n; ++i) {
    if (!(std::abs(d(i - 1)) > 0.0)) throw Error(ErrorKind::AssemblyFailure, "singular tridiagonal pivot");
    l(i - 1) = t.off(i - 1) / d(i - 1);
    d(i) = t.diag(i) - l(i - 1) * t.off(i - 1);
  }
  if (!(std::abs(d(n - 1)) > 0.0)) throw Error(ErrorKind::AssemblyFailure, "singular tridiagonal pivot");
}

Eigen::VectorXd tri_solve(const Eigen::VectorXd& d, const Eigen::VectorXd& l, Eigen::VectorXd x) {
  const Eigen::Index n = d.size();
  for (Eigen::Index i = 1; i < n; ++i) x(i) -= l(i - 1) * x(i - 1);
  for (Eigen::Index i = 0; i < n; ++i) x(i) /= d(i);
  for (Eigen::Index i = n - 2; i >= 0; --i) x(i) -= l(i) * x(i + 1);
  return x;
}

double angular_factor(int k) { return k == 0 ? 2.0 * kPi : kPi; }

// Gauss points of a grid without a profile (unit weight).
void gauss_points(const RadialGrid& grid, std::vector<double>& gr, std::vector<double>& gw) {
  const auto& r = grid.nodes();
  const auto& rule = gauss_legendre(kGaussPoints);
  for (std::size_t e = 0; e + 1 < r.size(); ++e) {
    const double c = 0.5 * (r[e] + r[e + 1]), h = 0.5 * (r[e + 1] - r[e]);
    for (int q = 0; q < kGaussPoints; ++q) {
      gr.push_back(c + h * rule.x[q]);
      gw.push_back(h * rule.w[q]);
    }
  }
}

}  // namespace

ModeKPoissonSolver::ModeKPoissonSolver(const RadialGrid& grid, int k) : grid_(grid), k_(k) {
  if (k < 0) throw Error(ErrorKind::InvalidArgument, "mode must be >= 0");
  if (grid.size() < 3) throw Error(ErrorKind::InvalidGrid, "Poisson solver needs at least 3 nodes");
  std::vector<double> gr, gw;
  gauss_points(grid, gr, gw);
  const double ang = angular_factor(k);
  auto one = [](std::size_t) { return 1.0; };
  stiffness_ = assemble(grid, first(), gr, gw, one, 0.0, ang, ang * k * k);
  mass_ = assemble(grid, first(), gr, gw, one, ang, 0.0, 0.0);
  const Eigen::Index last = stiffness_.size() - 1;
  if (k == 0) {
    stiffness_.diag(last) = 1.0;
    stiffness_.off(last - 1) = 0.0;
  } else {
    stiffness_.diag(last) += ang * k;
  }
  tri_factor(stiffness_, ldl_d_, ldl_l_);
}

Eigen::VectorXd ModeKPoissonSolver::solve_load(const Eigen::VectorXd& load) const {
  if (load.size() != dofs()) throw Error(ErrorKind::InvalidArgument, "load size mismatch");
  Eigen::VectorXd b = load;
  if (k_ == 0) b(b.size() - 1) = 0.0;
  return tri_solve(ldl_d_, ldl_l_, b);
}

double ModeKPoissonSolver::residual(const Eigen::VectorXd& phi, const Eigen::VectorXd& load) const {
  Eigen::VectorXd b = load;
  if (k_ == 0) b(b.size() - 1) = 0.0;
  const double nb = b.norm();
  return (stiffness_.apply(phi) - b).norm() / (nb > 0 ? nb : 1.0);
}

std::vector<double> ModeKPoissonSolver::solve(const std::vector<double>& w, bool free_space_gauge) const {
  if (w.size() != grid_.size()) throw Error(ErrorKind::InvalidArgument, "density size mismatch");
  const int f = first();
  Eigen::VectorXd wa(dofs());
  for (Eigen::Index i = 0; i < dofs(); ++i) wa(i) = w[static_cast<std::size_t>(i + f)];
  const Eigen::VectorXd load = mass_.apply(wa);
  Eigen::VectorXd phi = solve_load(load);
  std::vector<double> out(grid_.size(), 0.0);
  for (Eigen::Index i = 0; i < dofs(); ++i) out[static_cast<std::size_t>(i + f)] = phi(i);
  if (k_ == 0 && free_space_gauge) {
    const double m = load.sum();  // (w, 1) with the P1 interpolant
    const double shift = -m / (2.0 * kPi) * std::log(grid_.r_max());
    for (double& v : out) v += shift;
  }
  return out;
}

const char* to_string(Constraint c) {
  switch (c) {
    case Constraint::mass: return "mass";
    case Constraint::second_moment: return "second_moment";
    case Constraint::center: return "center";
    case Constraint::dilation: return "dilation";
  }
  return "?";
}

std::vector<Constraint> constraint_set(const std::string& name) {
  if (name == "none") return {};
  if (name == "mass") return {Constraint::mass};
  if (name == "full")
    return {Constraint::mass, Constraint::second_moment, Constraint::center, Constraint::dilation};
  throw Error(ErrorKind::InvalidArgument, "unknown constraint set '" + name + "'");
}

Eigen::VectorXd OperatorDiscretization::constraint_vector(Constraint c) const {
  const Eigen::Index n = dofs();
  // Representers come from the profile identities
  //   M(Lambda Q) = 2 - M/2pi - mu |y|^2,  M(d_i Q) = -mu y_i,
  // so (w, M Lambda Q) and (w, M d_i Q) reduce to exact moments.
  switch (c) {
    case Constraint::mass:
      return mode == 0 ? moment[0] : Eigen::VectorXd::Zero(n);
    case Constraint::second_moment:
      return mode == 0 ? moment[2] : Eigen::VectorXd::Zero(n);
    case Constraint::center:
      return mode == 1 ? Eigen::VectorXd(-mu * moment[1]) : Eigen::VectorXd::Zero(n);
    case Constraint::dilation:
      if (mode != 0) return Eigen::VectorXd::Zero(n);
      return (2.0 - mass / (2.0 * kPi)) * moment[0] - mu * moment[2];
  }
  return Eigen::VectorXd::Zero(n);
}

Eigen::VectorXd OperatorDiscretization::potential(const Eigen::VectorXd& g) const {
  return poisson.solve_load(mq.apply(g));
}

Eigen::VectorXd OperatorDiscretization::apply_b(const Eigen::VectorXd& g) const {
  return mq.apply(g - potential(g));
}

Eigen::VectorXd OperatorDiscretization::apply_a(const Eigen::VectorXd& g) const {
  // a = (I - P)^T S (I - P) with P^T = Mq K^{-1} (K^{-1} symmetric after the
  // Dirichlet row is removed).
  const Eigen::VectorXd z = sq.apply(g - potential(g));
  return z - mq.apply(poisson.solve_load(z));
}

double OperatorDiscretization::dual_norm(const Eigen::VectorXd& f) const {
  Tridiagonal h1{mq.diag + sq.diag, mq.off + sq.off};
  Eigen::VectorXd d, l;
  tri_factor(h1, d, l);
  return std::sqrt(std::max(0.0, f.dot(tri_solve(d, l, f))));
}

double OperatorDiscretization::weighted_norm(const Eigen::VectorXd& g) const {
  return std::sqrt(std::max(0.0, g.dot(mq.apply(g))));
}

OperatorDiscretization assemble_operator(double mu, const RadialGrid& grid, int k, const ProfileOptions& opt,
                                         bool dense) {
  if (!(mu > 0.0) || mu > 1.0) throw Error(ErrorKind::ProfileMissing, "operator needs a profile with 0 < mu <= 1");
  if (k < 0) throw Error(ErrorKind::InvalidArgument, "mode must be >= 0");
  const ProfileSamples s = sample_profile(mu, grid, opt);
  OperatorDiscretization op;
  op.mu = mu;
  op.mode = k;
  op.grid = grid;
  op.first = k == 0 ? 0 : 1;
  op.mass = s.mass;
  op.angular = angular_factor(k);
  auto qw = [&](std::size_t g) { return s.gq[g]; };
  op.mq = assemble(grid, op.first, s.gr, s.gw, qw, op.angular, 0.0, 0.0);
  op.sq = assemble(grid, op.first, s.gr, s.gw, qw, 0.0, op.angular, op.angular * k * k);
  op.poisson = ModeKPoissonSolver(grid, k);
  const Eigen::Index n = op.poisson.dofs();
  {
    const auto& r = grid.nodes();
    for (auto& m : op.moment) m = Eigen::VectorXd::Zero(n);
    for (std::size_t e = 0; e + 1 < r.size(); ++e) {
      const double h = r[e + 1] - r[e];
      for (int q = 0; q < kGaussPoints; ++q) {
        const std::size_t g = e * kGaussPoints + q;
        const double x = s.gr[g], l = (r[e + 1] - x) / h, rr = (x - r[e]) / h;
        const double w = op.angular * s.gw[g] * s.gq[g] * x;
        const Eigen::Index i = static_cast<Eigen::Index>(e) - op.first;
        for (int p = 0; p < 3; ++p) {
          const double wp = w * std::pow(x, p);
          if (i >= 0) op.moment[p](i) += wp * l;
          op.moment[p](i + 1) += wp * rr;
        }
      }
    }
  }

  if (dense) {
    // p = K^{-1} Mq maps g to the nodal potential of w = Q g.
    Eigen::MatrixXd pm(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      Eigen::VectorXd col = Eigen::VectorXd::Zero(n);
      col(j) = op.mq.diag(j);
      if (j > 0) col(j - 1) = op.mq.off(j - 1);
      if (j + 1 < n) col(j + 1) = op.mq.off(j);
      pm.col(j) = op.poisson.solve_load(col);
    }
    const Eigen::MatrixXd imp = Eigen::MatrixXd::Identity(n, n) - pm;
    Eigen::MatrixXd smp(n, n);
    for (Eigen::Index j = 0; j < n; ++j) smp.col(j) = op.sq.apply(imp.col(j));
    op.a.noalias() = imp.transpose() * smp;
    op.b = op.mq.dense();
    for (Eigen::Index j = 0; j < n; ++j) op.b.col(j) -= op.mq.apply(pm.col(j));

    const double na = op.a.norm(), nb = op.b.norm();
    op.symmetry_defect = std::max((op.a - op.a.transpose()).norm() / na, (op.b - op.b.transpose()).norm() / nb);
    if (!(op.symmetry_defect <= 1e-12))
      throw Error(ErrorKind::AssemblyFailure, "forms not symmetric: defect " + std::to_string(op.symmetry_defect));
    op.a = 0.5 * (op.a + op.a.transpose()).eval();
    op.b = 0.5 * (op.b + op.b.transpose()).eval();
  }

  op.g_lambda.resize(n);
  op.g_dmu.resize(n);
  op.g_grad.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t j = static_cast<std::size_t>(i + op.first);
    const double r = grid[j];
    const double dlogq = s.node_dphi[j] - mu * r;  // Q'/Q
    op.g_lambda(i) = 2.0 + r * dlogq;
    op.g_dmu(i) = s.node_p[j] - 0.5 * r * r;
    op.g_grad(i) = dlogq;
  }
  return op;
}

RadialGrid identity_grid(double mu, double refine) { return spectral_grid(mu, 128.0 * refine); }

IdentityResiduals verify_algebraic_identities(double mu, const RadialGrid& grid, const ProfileOptions& opt) {
  IdentityResiduals out;
  const auto op0 = assemble_operator(mu, grid, 0, opt, false);
  const Eigen::VectorXd bl = op0.apply_b(op0.g_lambda);
  out.dmu_to_lambda = op0.dual_norm(op0.apply_a(op0.g_dmu) - bl) / op0.dual_norm(bl);
  out.lambda_eigen = op0.dual_norm(op0.apply_a(op0.g_lambda) - 2.0 * mu * bl) / op0.dual_norm(2.0 * mu * bl);
  const Eigen::VectorXd gk = op0.g_dmu - op0.g_lambda / (2.0 * mu);
  out.kernel = op0.dual_norm(op0.apply_a(gk)) / op0.weighted_norm(gk);

  const auto op1 = assemble_operator(mu, grid, 1, opt, false);
  const Eigen::VectorXd bg = op1.apply_b(op1.g_grad);
  out.grad_eigen = op1.dual_norm(op1.apply_a(op1.g_grad) - mu * bg) / op1.dual_norm(mu * bg);
  out.grad_rayleigh = op1.g_grad.dot(op1.apply_a(op1.g_grad)) / op1.g_grad.dot(bg);
  return out;
}

EigenResult constrained_smallest(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                 const Eigen::MatrixXd& constraints, double scale, const EigenOptions& opt) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || b.rows() != n || b.cols() != n || (constraints.size() > 0 && constraints.rows() != n))
    throw Error(ErrorKind::InvalidArgument, "eigenproblem dimension mismatch");

  // Normalized constraint columns, dependent ones dropped by pivoted QR.
  EigenResult res;
  Eigen::MatrixXd c(n, 0);
  for (Eigen::Index j = 0; j < constraints.cols(); ++j) {
    const double nj = constraints.col(j).norm();
    if (nj > 0.0) {
      c.conservativeResize(n, c.cols() + 1);
      c.col(c.cols() - 1) = constraints.col(j) / nj;
    }
  }
  Eigen::MatrixXd ar = a, br = b;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  int rank = 0;
  if (c.cols() > 0) {
    qr.setThreshold(opt.rank_tol);
    qr.compute(c);
    rank = static_cast<int>(qr.rank());
    const auto h = qr.householderQ().setLength(rank);
    ar = h.adjoint() * ar;
    ar = ar * h;
    br = h.adjoint() * br;
    br = br * h;
  }
  res.constraint_rank = rank;
  const Eigen::Index m = n - rank;
  if (m < 1) throw Error(ErrorKind::EigenSolveFailure, "constraints leave an empty subspace");
  const Eigen::MatrixXd at = ar.bottomRightCorner(m, m);
  const Eigen::MatrixXd bt = br.bottomRightCorner(m, m);

  Eigen::LLT<Eigen::MatrixXd> bllt(bt);
  if (bllt.info() != Eigen::Success) throw Error(ErrorKind::IndefiniteB, "mass form is not positive definite on the constrained subspace");
  const double sigma = opt.shift_factor * scale;
  Eigen::LLT<Eigen::MatrixXd> shifted(at - sigma * bt);
  if (shifted.info() != Eigen::Success) throw Error(ErrorKind::EigenSolveFailure, "shifted operator is not positive definite");

  const int nev = static_cast<int>(std::min<Eigen::Index>(opt.nev, m));
  const int kmax = static_cast<int>(std::min<Eigen::Index>(m, opt.max_basis > 0 ? opt.max_basis : 200));
  Eigen::MatrixXd v(m, kmax + 1), bv(m, kmax + 1);
  std::vector<double> alpha, beta;
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> nd;
  Eigen::VectorXd x(m);
  for (Eigen::Index i = 0; i < m; ++i) x(i) = nd(rng);
  Eigen::VectorXd bx = bt * x;
  double nrm = std::sqrt(x.dot(bx));
  v.col(0) = x / nrm;
  bv.col(0) = bx / nrm;

  Eigen::VectorXd theta;
  Eigen::MatrixXd s;
  bool converged = false;
  int steps = 0;
  for (int j = 0; j < kmax; ++j) {
    Eigen::VectorXd w = shifted.solve(bv.col(j));
    const double aj = w.dot(bv.col(j));
    alpha.push_back(aj);
    // Full reorthogonalization in the b-inner product, twice.
    for (int pass = 0; pass < 2; ++pass) {
      const Eigen::VectorXd coeff = bv.leftCols(j + 1).transpose() * w;
      w -= v.leftCols(j + 1) * coeff;
    }
    const Eigen::VectorXd bw = bt * w;
    const double bj = std::sqrt(std::max(0.0, w.dot(bw)));
    steps = j + 1;
    const bool exhausted = steps == m || bj <= 1e-14 * std::abs(aj);
    if (steps >= nev && (steps % 5 == 0 || exhausted || steps == kmax)) {
      Eigen::MatrixXd t = Eigen::MatrixXd::Zero(steps, steps);
      for (int i = 0; i < steps; ++i) t(i, i) = alpha[i];
      for (int i = 0; i + 1 < steps; ++i) t(i, i + 1) = t(i + 1, i) = beta[i];
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
      theta = es.eigenvalues();
      s = es.eigenvectors();
      converged = true;
      for (int i = 0; i < nev; ++i) {
        const int col = steps - 1 - i;
        if (std::abs(bj * s(steps - 1, col)) > opt.tol * std::abs(theta(col))) converged = false;
      }
      if (exhausted) converged = true;
      if (converged) break;
    }
    if (exhausted) break;
    beta.push_back(bj);
    v.col(j + 1) = w / bj;
    bv.col(j + 1) = bw / bj;
  }
  if (!converged) throw Error(ErrorKind::EigenSolveFailure, "Lanczos did not converge in " + std::to_string(steps) + " steps");
  res.lanczos_steps = steps;

  for (int i = 0; i < nev; ++i) {
    const int col = steps - 1 - i;
    const double nu = sigma + 1.0 / theta(col);
    const Eigen::VectorXd y = v.leftCols(steps) * s.col(col);
    const Eigen::VectorXd by = bt * y;
    const double r = (at * y - nu * by).norm() / std::max(std::abs(nu) * by.norm(), 1e-300);
    res.max_residual = std::max(res.max_residual, r);
    Eigen::VectorXd full = Eigen::VectorXd::Zero(n);
    full.tail(m) = y;
    if (rank > 0) full = qr.householderQ().setLength(rank) * full;
    res.values.push_back(nu);
    res.vectors.push_back(full);
  }
  return res;
}

SpectrumReport spectral_gap(const OperatorDiscretization& op, const std::vector<Constraint>& cs, const EigenOptions& opt) {
  Eigen::MatrixXd c(op.dofs(), static_cast<Eigen::Index>(cs.size()));
  for (std::size_t j = 0; j < cs.size(); ++j) c.col(static_cast<Eigen::Index>(j)) = op.constraint_vector(cs[j]);
  const EigenResult er = constrained_smallest(op.a, op.b, c, op.mu, opt);
  SpectrumReport rep;
  rep.mu = op.mu;
  rep.mode = op.mode;
  rep.constraints = cs;
  rep.eigenvalues = er.values;
  rep.nu1_over_mu = er.values.front() / op.mu;
  rep.dofs = static_cast<int>(op.dofs());
  rep.constraint_rank = er.constraint_rank;
  rep.grid = describe(op.grid.spec());
  return rep;
}

namespace {

// Weighted P1 forms for the appendix inequalities (mode 0).
struct ScalarForms {
  ProfileSamples s;
  Tridiagonal mq, sq;
};

ScalarForms scalar_forms(double mu, const RadialGrid& grid, const ProfileOptions& opt) {
  if (!(mu > 0.0) || mu > 1.0) throw Error(ErrorKind::ProfileMissing, "needs a profile with 0 < mu <= 1");
  ScalarForms f;
  f.s = sample_profile(mu, grid, opt);
  auto qw = [&](std::size_t g) { return f.s.gq[g]; };
  f.mq = assemble(grid, 0, f.s.gr, f.s.gw, qw, 2.0 * kPi, 0.0, 0.0);
  f.sq = assemble(grid, 0, f.s.gr, f.s.gw, qw, 0.0, 2.0 * kPi, 0.0);
  return f;
}

double quad(const Tridiagonal& t, const Eigen::VectorXd& x) { return x.dot(t.apply(x)); }

// Random smooth radial function: constant plus Gaussians of log-uniform width.
struct TestFunctionSampler {
  std::mt19937_64 rng;
  double log_lo, log_hi;
  TestFunctionSampler(std::uint64_t seed, double lo, double hi) : rng(seed), log_lo(std::log(lo)), log_hi(std::log(hi)) {}
  Eigen::VectorXd operator()(const std::vector<double>& r) {
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(log_lo, log_hi);
    const double c0 = nd(rng);
    double amp[3], width[3];
    for (int j = 0; j < 3; ++j) {
      amp[j] = nd(rng);
      width[j] = std::exp(ud(rng));
    }
    const double lin = nd(rng), lw = std::exp(ud(rng));
    Eigen::VectorXd f(static_cast<Eigen::Index>(r.size()));
    for (std::size_t i = 0; i < r.size(); ++i) {
      double v = c0;
      for (int j = 0; j < 3; ++j) v += amp[j] * std::exp(-0.5 * r[i] * r[i] / (width[j] * width[j]));
      v += lin * (r[i] / lw) * std::exp(-0.5 * r[i] * r[i] / (lw * lw));
      f(static_cast<Eigen::Index>(i)) = v;
    }
    return f;
  }
};

}  // namespace

HardyReport hardy_constant(double mu, const RadialGrid& grid, const ProfileOptions& opt) {
  const ScalarForms f = scalar_forms(mu, grid, opt);
  auto hw = [&](std::size_t g) {
    const double y2 = f.s.gr[g] * f.s.gr[g];
    return f.s.gq[g] * y2 / ((1.0 + y2) * (1.0 + y2));
  };
  const Tridiagonal h = assemble(grid, 0, f.s.gr, f.s.gw, hw, 2.0 * kPi, 0.0, 0.0);
  const Eigen::Index n = h.size();
  // Constraint (f, phi_{Lambda Q} Q) with phi_{Lambda Q} = r phi' + M/2pi.
  Eigen::VectorXd c(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t j = static_cast<std::size_t>(i);
    c(i) = grid[j] * f.s.node_dphi[j] + f.s.mass / (2.0 * kPi);
  }
  c = f.mq.apply(c);
  const Eigen::MatrixXd g = f.sq.dense(), hd = h.dense();
  EigenOptions eo;
  eo.nev = 1;
  HardyReport rep;
  rep.mu = mu;
  rep.nu_min = constrained_smallest(g, hd, c, 1.0, eo).values.front();
  rep.constant = 1.0 / rep.nu_min;
  rep.unconstrained_nu = constrained_smallest(g, hd, Eigen::MatrixXd(n, 0), 1.0, eo).values.front();
  return rep;
}

PoincareReport verify_weighted_poincare(double mu, const RadialGrid& grid, std::size_t samples,
                                        std::uint64_t seed, const ProfileOptions& opt) {
  const ScalarForms f = scalar_forms(mu, grid, opt);
  auto r2w = [&](std::size_t g) { return f.s.gq[g] * f.s.gr[g] * f.s.gr[g]; };
  const Tridiagonal mr2 = assemble(grid, 0, f.s.gr, f.s.gw, r2w, 2.0 * kPi, 0.0, 0.0);
  // Unit-ball mass form: Gauss points beyond r = 1 get zero weight, and the
  // cell containing r = 1 is integrated by its own sub-rule.
  const auto& r = grid.nodes();
  Tridiagonal mb1;
  mb1.diag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r.size()));
  mb1.off = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r.size()) - 1);
  {
    const auto& rule = gauss_legendre(kGaussPoints);
    std::vector<double> sub_r, sub_w;
    std::vector<std::size_t> sub_cell;
    for (std::size_t e = 0; e + 1 < r.size() && r[e] < 1.0; ++e) {
      const double b = std::min(r[e + 1], 1.0);
      const double c = 0.5 * (r[e] + b), h = 0.5 * (b - r[e]);
      for (int q = 0; q < kGaussPoints; ++q) {
        sub_r.push_back(c + h * rule.x[q]);
        sub_w.push_back(h * rule.w[q]);
        sub_cell.push_back(e);
      }
    }
    const auto st = integrate_profile(mu, sub_r, opt);
    for (std::size_t g = 0; g < sub_r.size(); ++g) {
      const std::size_t e = sub_cell[g];
      const double x = sub_r[g], h = r[e + 1] - r[e];
      const double l = (r[e + 1] - x) / h, rr = (x - r[e]) / h;
      const double w = 2.0 * kPi * sub_w[g] * x * 8.0 * std::exp(st[g].phi - 0.5 * mu * x * x);
      const Eigen::Index i = static_cast<Eigen::Index>(e);
      mb1.diag(i) += w * l * l;
      mb1.diag(i + 1) += w * rr * rr;
      mb1.off(i) += w * l * rr;
    }
  }
  auto ratio = [&](const Eigen::VectorXd& v) {
    return quad(mr2, v) / (quad(f.sq, v) / (mu * mu) + quad(mb1, v) / mu);
  };
  PoincareReport rep;
  rep.mu = mu;
  const Eigen::Index n = static_cast<Eigen::Index>(r.size());
  rep.constant_case = ratio(Eigen::VectorXd::Ones(n));
  Eigen::VectorXd bump(n);
  for (Eigen::Index i = 0; i < n; ++i) bump(i) = r[static_cast<std::size_t>(i)] * std::exp(-0.5 * r[static_cast<std::size_t>(i)] * r[static_cast<std::size_t>(i)]);
  rep.linear_bump_case = ratio(bump);
  rep.c_prime = std::max(rep.constant_case, rep.linear_bump_case);
  TestFunctionSampler sampler(seed, 0.2, 3.0 / std::sqrt(mu));
  for (std::size_t k = 0; k < samples; ++k) rep.c_prime = std::max(rep.c_prime, ratio(sampler(r)));
  rep.samples = samples + 2;
  // Sharp constant: largest ratio over the whole discrete space.
  Eigen::MatrixXd den = f.sq.dense() / (mu * mu) + mb1.dense() / mu;
  EigenOptions eo;
  eo.nev = 1;
  const double nu = constrained_smallest(den, mr2.dense(), Eigen::MatrixXd(n, 0), 1.0 / rep.c_prime, eo).values.front();
  rep.sharp = 1.0 / nu;
  return rep;
}

PotentialReport verify_potential_bounds(double mu, const RadialGrid& grid, std::size_t samples,
                                        std::uint64_t seed, const ProfileOptions& opt) {
  const ScalarForms f = scalar_forms(mu, grid, opt);
  const ModeKPoissonSolver poisson(grid, 0);
  const auto& r = grid.nodes();
  const Eigen::Index n = static_cast<Eigen::Index>(r.size());
  const Eigen::VectorXd c0 = f.mq.apply(Eigen::VectorXd::Ones(n));
  Eigen::VectorXd r2(n), h1(n), h2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = r[static_cast<std::size_t>(i)];
    r2(i) = x * x;
    h1(i) = std::exp(-0.5 * x * x);
    h2(i) = x * x * h1(i);
  }
  const Eigen::VectorXd c2 = f.mq.apply(r2);

  // Returns the three ratios for eps = Q g.
  auto ratios = [&](const Eigen::VectorXd& g, double out[3]) {
    const double eps = std::sqrt(quad(f.mq, g));
    const Eigen::VectorXd phi = poisson.solve_load(f.mq.apply(g));
    out[0] = phi.cwiseAbs().maxCoeff() / eps;
    out[1] = std::sqrt(std::max(0.0, quad(poisson.stiffness(), phi))) / eps;
    out[2] = std::sqrt(quad(poisson.mass_matrix(), phi)) / eps;
  };
  PotentialReport rep;
  rep.mu = mu;
  // The same suite (widths in y fixed) at every mu, so ratios are comparable.
  // Moments are removed with core-localized corrections; subtracting a + b r^2
  // instead would give eps a tail reaching out to 1/sqrt(mu).
  Eigen::Matrix2d m;
  m << c0.dot(h1), c0.dot(h2), c2.dot(h1), c2.dot(h2);
  const auto lu = m.partialPivLu();
  TestFunctionSampler sampler(seed, 0.2, 10.0);
  for (std::size_t k = 0; k < samples; ++k) {
    const Eigen::VectorXd g = sampler(r);
    // Zero mass for the sup and gradient bounds.
    const Eigen::VectorXd g0 = g - (c0.dot(g) / c0.dot(h1)) * h1;
    double q0[3];
    ratios(g0, q0);
    rep.sup_ratio = std::max(rep.sup_ratio, q0[0]);
    rep.grad_ratio = std::max(rep.grad_ratio, q0[1]);
    // Zero mass and zero second moment for the L^2 bound.
    const Eigen::Vector2d ab = lu.solve(Eigen::Vector2d(c0.dot(g), c2.dot(g)));
    const Eigen::VectorXd g2 = g - ab(0) * h1 - ab(1) * h2;
    double q2[3];
    ratios(g2, q2);
    rep.l2_ratio = std::max(rep.l2_ratio, q2[2]);
  }
  rep.samples = samples;
  Eigen::VectorXd gl(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t j = static_cast<std::size_t>(i);
    gl(i) = 2.0 + r[j] * (f.s.node_dphi[j] - mu * r[j]);
  }
  ratios(gl, rep.lambda_q_ratios);
  return rep;
}

ProfileResidualReport verify_profile_residual(double mu, const RadialGrid& grid, const ProfileOptions& opt) {
  if (!(mu > 0.0) || mu > 1.0) throw Error(ErrorKind::ProfileMissing, "needs a profile with 0 < mu <= 1");
  const auto& r = grid.nodes();
  const std::size_t n = r.size();
  const auto st = integrate_profile(mu, r, opt);
  const double mass = -2.0 * kPi * st.back().psi, dmass = -2.0 * kPi * st.back().pi;
  const double mt = (mass - kEightPi) / dmass;

  // Radial fluxes; E = (1/r) d(flux)/dr.
  std::vector<double> fd(n, 0.0), fq(n, 0.0), lq(n, 0.0), q(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const double x = r[i];
    const double dphi = st[i].psi / x, dp = st[i].pi / x;
    q[i] = 8.0 * std::exp(st[i].phi - 0.5 * mu * x * x);
    const double dq = q[i] * (dphi - mu * x);
    const double sm = st[i].p - 0.5 * x * x;
    const double d = q[i] * sm, dd = dq * sm + q[i] * (dp - x);
    const double qt = q[i] - mt * d, dqt = dq - mt * dd, dphit = dphi - mt * dp;
    fd[i] = x * (dqt - qt * dphit) + mu * x * x * qt;
    fq[i] = x * d * dp;
    lq[i] = 2.0 * q[i] + x * dq;
  }
  q[0] = 8.0;
  // Nonuniform three-point derivative, one-sided at the outer end.
  auto ddr = [&](const std::vector<double>& f, std::size_t i) {
    if (i + 1 == n) {
      const double h1 = r[i] - r[i - 1], h2 = r[i - 1] - r[i - 2];
      return (f[i] - f[i - 1]) / h1 + h1 * ((f[i] - f[i - 1]) / h1 - (f[i - 1] - f[i - 2]) / h2) / (h1 + h2);
    }
    const double hm = r[i] - r[i - 1], hp = r[i + 1] - r[i];
    return (hm * hm * f[i + 1] - hp * hp * f[i - 1] + (hp * hp - hm * hm) * f[i]) / (hm * hp * (hm + hp));
  };
  std::vector<double> e_dir(n, 0.0), e_alg(n, 0.0), e_quad(n, 0.0), diff(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    e_dir[i] = ddr(fd, i) / r[i];
    e_quad[i] = mt * mt * ddr(fq, i) / r[i];
    e_alg[i] = mt * lq[i] - e_quad[i];
    diff[i] = e_dir[i] - e_alg[i];
  }
  auto wnorm = [&](const std::vector<double>& e) {
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = e[i] * e[i] / q[i];
    return std::sqrt(radial_moments(r, f).mass.value);
  };
  ProfileResidualReport rep;
  rep.mu = mu;
  rep.mu_tilde = mt;
  rep.direct_norm = wnorm(e_dir);
  rep.algebraic_norm = wnorm(e_alg);
  rep.difference = wnorm(diff);
  rep.quadratic_norm = wnorm(e_quad);
  return rep;
}

}  // namespace critmass
