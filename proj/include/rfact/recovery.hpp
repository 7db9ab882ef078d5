#pragma once

#include <vector>

#include "rfact/dual_solver.hpp"
#include "rfact/estimation.hpp"
#include "rfact/symmat.hpp"

namespace rfact {

struct RecoveryOptions {
  double kernel_rel_tol = 1e-6;  // kernel cut relative to ||Lambda||_2
  double act_tol = 1e-8;         // gamma_i treated as active above this
  double proj_tol = 1e-6;        // relative forgiveness for negative Q eigenvalues
  double residual_tol = 1e-4;    // inconsistency threshold relative to ||Sigma*||_inf
};

/// Sigma* = W^{-1} at the dual optimum.
SymMat recover_sigma(const DualSolution& sol, const CovarianceEstimate& est);

/// Lambda = I + Gamma - Theta = I - X*; positive semidefinite whenever the
/// point is feasible.
SymMat lambda_matrix(const DualSolution& sol);

struct KernelBasis {
  Matrix u;                      // n x r, orthonormal columns
  int r = 0;
  std::vector<double> spectrum;  // eigenvalues of Lambda, nonincreasing
  double threshold = 0.0;        // cut actually applied
};

/// Orthonormal basis of the numerical kernel of Lambda: eigenvectors whose
/// eigenvalues fall below rel_tol * ||Lambda||_2. r = 0 is a valid degenerate
/// result (R = 0) unless require_nontrivial is set.
KernelBasis kernel_basis(const SymMat& lambda, double rel_tol = 1e-6,
                         bool require_nontrivial = false);

struct QSolution {
  SymMat q;            // r x r
  SymMat r_mat;        // U q U^T, after PSD projection of q when warranted
  double residual = 0.0;  // largest violated equation
  bool non_unique = false;
};

/// Least-squares solve for Q from the off-diagonal matching equations plus
/// one diagonal equation per active gamma_i. Minimum-norm solution on a
/// rank-deficient system, flagged non_unique.
QSolution solve_for_q(const Matrix& u_tilde, const SymMat& sigma_star,
                      const SymMat& gamma, const RecoveryOptions& opts = {});

struct KktResiduals {
  double c1 = 0.0;  // |tr(Lambda R)|
  double c2 = 0.0;  // |tr(Gamma (Sigma - R))|
  double c3 = 0.0;  // |tr(Theta (Sigma - R))|
};

struct CertReport {
  KktResiduals kkt;            // normalized by 1 + tr(R)
  double gap = 0.0;            // |tr(R) + F*| / (1 + tr(R))
  double boundary = 0.0;       // |2 KL - delta| / (1 + tr(R))
  double boundary_raw = 0.0;   // |2 KL - delta|
  bool pass = false;           // every normalized residual <= 1e-5
};

struct Decomposition {
  SymMat Sigma;        // robust covariance Sigma*
  SymMat R;            // low-rank part
  SymMat D;            // diagonal part, diag(Sigma* - R)
  int rank_R = 0;
  double duality_gap = 0.0;
  KktResiduals kkt;
  double kl_to_sigma_hat = 0.0;
  KernelBasis kernel;
  SymMat Q;
  bool non_unique = false;
  double ls_residual = 0.0;
  CertReport cert;
};

/// KKT and duality-gap certification of a recovered decomposition.
CertReport certify(const Decomposition& dec, const DualSolution& sol,
                   const CovarianceEstimate& est, double delta);

/// Full pipeline: dual solve, primal recovery, certification.
Decomposition decompose(const CovarianceEstimate& est, double delta,
                        const DualSolverOptions& solver_opts = {},
                        const RecoveryOptions& opts = {});

/// Recovery applied to an existing dual solution.
Decomposition recover(const DualSolution& sol, const CovarianceEstimate& est,
                      double delta, const RecoveryOptions& opts = {});

}  // namespace rfact
