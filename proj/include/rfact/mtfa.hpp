#pragma once

#include <vector>

#include "rfact/symmat.hpp"

namespace rfact {

struct MtfaOptions {
  double tol = 1e-7;       // relative stopping tolerance on both residuals
  int max_iterations = 50000;
  double rho_ratio = 10.0;   // residual-balancing trigger
  double rho_factor = 2.0;   // penalty rescale step
};

struct MtfaSolution {
  SymMat R;
  SymMat D;                  // diagonal
  double trace_R = 0.0;
  int iterations = 0;
  double primal_residual = 0.0;  // ||R + D - Sigma||_F / scale
  double dual_residual = 0.0;
  bool converged = false;
  SymMat multiplier;         // Y, the multiplier of R + D = Sigma
};

/// Minimum-trace factor analysis: min tr(R) s.t. R >= 0, D diagonal >= 0,
/// Sigma = R + D. Operator splitting on (R, D); the R update is a PSD
/// projection with eigenvalue soft-threshold 1/rho, the D update clamps the
/// diagonal at zero.
MtfaSolution solve_mtfa(const SymMat& sigma, const MtfaOptions& opts = {});

/// Top-k singular values of a symmetric matrix (|eigenvalues|, nonincreasing).
std::vector<double> singular_value_report(const SymMat& m, int k);

}  // namespace rfact
