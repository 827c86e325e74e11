#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "critmass/grid.hpp"
#include "critmass/profiles.hpp"

namespace critmass {

// Linearized operator around Q_mu in self-similar variables, per angular mode:
//   L w = div(Q grad(M w)),  M w = w / Q - phi_w.
// Functions are represented as w = Q g with g piecewise linear on the grid, so
// that ||w||^2_{L^2_Q} = int Q g^2 and the weight never divides by a tiny Q.

// Graded grid used by the spectral checks. refine > 1 shrinks every spacing.
RadialGrid spectral_grid(double mu, double refine = 1.0);

// Symmetric tridiagonal matrix on the active nodes.
struct Tridiagonal {
  Eigen::VectorXd diag, off;  // off(i) couples i and i+1

  Eigen::Index size() const { return diag.size(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd dense() const;
};

// -(phi'' + phi'/r - k^2 phi/r^2) = w on [0, R] in weak P1 form. Mode 0 uses
// phi(R) = 0, the decaying gauge for zero-mass data; k >= 1 drops the origin
// node and uses the Robin condition phi'(R) = -k phi(R) / R.
class ModeKPoissonSolver {
 public:
  ModeKPoissonSolver() = default;
  ModeKPoissonSolver(const RadialGrid& grid, int k);

  int mode() const { return k_; }
  // Index of the first active node (0 for k = 0, 1 otherwise).
  int first() const { return k_ == 0 ? 0 : 1; }
  Eigen::Index dofs() const { return stiffness_.size(); }
  const Tridiagonal& stiffness() const { return stiffness_; }

  // Solve with a load vector (int w psi_j r dr per active node).
  Eigen::VectorXd solve_load(const Eigen::VectorXd& load) const;
  // Solve for a nodal density w (all grid nodes). For k = 0 and
  // free_space_gauge, the mass shift -(m / 2pi) log R is applied so phi
  // matches -(1/2pi) log|.| * w outside the support.
  std::vector<double> solve(const std::vector<double>& w, bool free_space_gauge = false) const;
  // Relative residual ||K phi - load|| / ||load|| of the last solve_load.
  double residual(const Eigen::VectorXd& phi, const Eigen::VectorXd& load) const;
  // Unweighted P1 mass matrix (with the angular factor) on the active nodes.
  const Tridiagonal& mass_matrix() const { return mass_; }

 private:
  RadialGrid grid_;
  int k_ = 0;
  Tridiagonal stiffness_;  // with boundary rows applied
  Tridiagonal mass_;
  Eigen::VectorXd ldl_d_, ldl_l_;
};

enum class Constraint : std::uint8_t { mass, second_moment, center, dilation };
const char* to_string(Constraint c);
std::vector<Constraint> constraint_set(const std::string& name);  // "none", "mass", "full"

struct OperatorDiscretization {
  double mu = 0;
  int mode = 0;
  RadialGrid grid;
  int first = 0;                     // first active node
  double mass = 0;                   // M(mu)
  Eigen::MatrixXd a, b;              // dense forms in g (empty when assembled matrix-free)
  Tridiagonal mq, sq;                // int Q psi_i psi_j, int Q (psi_i' psi_j' + k^2/r^2 psi_i psi_j)
  ModeKPoissonSolver poisson;
  double angular = 0;                // 2pi for k = 0, pi otherwise
  double symmetry_defect = 0;
  // Nodal g of the profile directions on the active nodes.
  Eigen::VectorXd g_lambda, g_dmu, g_grad;
  // Exact moments angular * int Q r^p psi_j r dr, p = 0, 1, 2.
  Eigen::VectorXd moment[3];

  Eigen::Index dofs() const { return mq.size(); }
  // Nodal potential of w = Q g.
  Eigen::VectorXd potential(const Eigen::VectorXd& g) const;
  // Matrix-free a g and b g (same values as the dense forms).
  Eigen::VectorXd apply_a(const Eigen::VectorXd& g) const;
  Eigen::VectorXd apply_b(const Eigen::VectorXd& g) const;
  // Linear functional c with c.g = (w, test) for the requested constraint.
  Eigen::VectorXd constraint_vector(Constraint c) const;
  // Dual norm of a weak residual with respect to the H^1_Q norm
  // int Q (g^2 + |grad g|^2).
  double dual_norm(const Eigen::VectorXd& f) const;
  double weighted_norm(const Eigen::VectorXd& g) const;  // sqrt(g^T Mq g)
};

// dense = false skips the O(n^2) matrices; only apply_a / apply_b are available.
OperatorDiscretization assemble_operator(double mu, const RadialGrid& grid, int k,
                                         const ProfileOptions& opt = {}, bool dense = true);

struct IdentityResiduals {
  double dmu_to_lambda = 0;  // L(d_mu Q) + Lambda Q
  double lambda_eigen = 0;   // L(Lambda Q) + 2 mu Lambda Q
  double grad_eigen = 0;     // mode 1: L(Q') + mu Q'
  double kernel = 0;         // L(d_mu Q - Lambda Q / 2mu), relative to its L^2_Q norm
  double grad_rayleigh = 0;  // a(g,g)/b(g,g) for the mode-1 direction, should be mu
};
// Residuals are dual H^1_Q norms relative to the term they should equal.
// The identities are cancellations of O(1) terms down to O(mu), so relative
// errors scale like h^2 / mu; the default identity grid is therefore much
// finer than the eigenvalue grid, and the check runs matrix-free.
RadialGrid identity_grid(double mu, double refine = 1.0);
IdentityResiduals verify_algebraic_identities(double mu, const RadialGrid& grid,
                                              const ProfileOptions& opt = {});

struct EigenOptions {
  int nev = 5;
  double shift_factor = -0.1;  // sigma = shift_factor * scale
  double tol = 1e-10;          // Ritz residual relative to |theta|
  int max_basis = 0;           // 0 = min(dofs, 200)
  std::uint64_t seed = 7;
  double rank_tol = 1e-6;      // constraint columns below this (relative) are dependent
};

struct EigenResult {
  std::vector<double> values;          // ascending
  std::vector<Eigen::VectorXd> vectors;  // in the full active-node basis
  int lanczos_steps = 0;
  int constraint_rank = 0;
  double max_residual = 0;
};

// Smallest eigenvalues of a x = nu b x on {C^T x = 0} by shift-invert Lanczos
// in the b-inner product. Constraints are removed with Householder reflectors.
EigenResult constrained_smallest(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                 const Eigen::MatrixXd& constraints, double scale,
                                 const EigenOptions& opt = {});

struct SpectrumReport {
  double mu = 0;
  int mode = 0;
  std::vector<Constraint> constraints;
  std::vector<double> eigenvalues;
  double nu1_over_mu = 0;  // the measured K2 when the full set is used
  int dofs = 0;
  int constraint_rank = 0;
  std::string grid;
};
SpectrumReport spectral_gap(const OperatorDiscretization& op, const std::vector<Constraint>& cs,
                            const EigenOptions& opt = {});

struct HardyReport {
  double mu = 0;
  double constant = 0;         // C = 1 / nu_min
  double nu_min = 0;
  double unconstrained_nu = 0; // near zero: constants are in the kernel
};
// Hardy inequality with weight |y|^2/(1+|y|^2)^2 Q under (f, phi_{Lambda Q} Q) = 0.
HardyReport hardy_constant(double mu, const RadialGrid& grid, const ProfileOptions& opt = {});

struct PoincareReport {
  double mu = 0;
  double c_prime = 0;          // max over samples of the admissible constant
  double sharp = 0;            // same over the whole discrete space (eigenproblem)
  double constant_case = 0;    // ratio for f = 1
  double linear_bump_case = 0; // ratio for f = r e^{-r^2/2}
  std::size_t samples = 0;
};
PoincareReport verify_weighted_poincare(double mu, const RadialGrid& grid, std::size_t samples,
                                        std::uint64_t seed, const ProfileOptions& opt = {});

struct PotentialReport {
  double mu = 0;
  double sup_ratio = 0;   // ||phi||_inf / ||eps||_{L^2_Q}
  double grad_ratio = 0;  // ||grad phi||_{L^2} / ||eps||_{L^2_Q}
  double l2_ratio = 0;    // ||phi||_{L^2} / ||eps||_{L^2_Q}, zero first and second moments
  double lambda_q_ratios[3] = {0, 0, 0};  // same three for eps = Lambda Q
  std::size_t samples = 0;
};
PotentialReport verify_potential_bounds(double mu, const RadialGrid& grid, std::size_t samples,
                                        std::uint64_t seed, const ProfileOptions& opt = {});

struct ProfileResidualReport {
  double mu = 0;
  double mu_tilde = 0;
  double direct_norm = 0;      // ||E||_{L^2_Q} from the definition
  double algebraic_norm = 0;   // ||E||_{L^2_Q} from the mu_tilde expansion
  double difference = 0;       // ||E_direct - E_algebraic||_{L^2_Q}
  double quadratic_norm = 0;   // ||mu_tilde^2 div(d_mu Q grad phi_{d_mu Q})||_{L^2_Q}
};
ProfileResidualReport verify_profile_residual(double mu, const RadialGrid& grid,
                                              const ProfileOptions& opt = {});

}  // namespace critmass
