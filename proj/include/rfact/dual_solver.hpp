#pragma once

#include <optional>
#include <vector>

#include "rfact/estimation.hpp"
#include "rfact/symmat.hpp"

namespace rfact {

/// Feasible point of the dual: lambda > 0, X <= I, diag(X) <= 0, and
/// W = Sigma_hat^{-1} + X/lambda > 0. W and log|W| are cached.
struct DualPoint {
  double lambda = 1.0;
  SymMat x;
  SymMat w;
  double logdet_w = 0.0;
};

/// Validates membership in the feasible set and caches W; throws
/// InfeasiblePoint naming the violated condition.
DualPoint make_dual_point(const CovarianceEstimate& est, double lambda, SymMat x);

struct DualSolverOptions {
  double tol = 1e-8;           // on the unit-step projected-gradient probe
  int max_iterations = 100000;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  double lambda_floor = 1e-10;
  double lambda_cap = 1e10;
  double x_norm_cap = 1e8;     // abort threshold on ||X||_2
  int projection_rounds = 1000;
  bool record_trace = false;
  double lambda0 = 1.0;        // initial point; X0 defaults to zero
  std::optional<SymMat> x0;
};

struct TraceRow {
  int iteration = 0;
  double objective = 0.0;
  double step = 0.0;
  double opt_measure = 0.0;
};

struct DualSolution {
  DualPoint point;
  SymMat theta;              // off-diagonal part of X*, zero diagonal
  SymMat gamma;              // -diag(X*), diagonal >= 0
  double objective = 0.0;    // F at the solution; the dual optimum is -F
  double grad_norm = 0.0;    // final probe value
  int iterations = 0;
  bool converged = false;
  std::vector<TraceRow> trace;  // filled when record_trace is set
};

/// F(lambda, X) = -lambda (log|W| + log|Sigma_hat| - delta).
double dual_objective(const DualPoint& p, const CovarianceEstimate& est, double delta);

/// Gradient of F: dF/dX = -W^{-1} under the trace inner product, and
/// dF/dlambda = -(log|W| + log|Sigma_hat| - delta) + tr(W^{-1} X)/lambda.
struct DualGradient {
  double d_lambda = 0.0;
  SymMat d_x;
};
DualGradient dual_gradient(const DualPoint& p, const CovarianceEstimate& est, double delta);

/// Nearest point of {X <= I, diag(X) <= 0} by alternating projections with
/// correction terms. The last operation clamps the diagonal, so the result
/// has diag <= 0 exactly and top eigenvalue <= 1 up to the alternation gap.
SymMat project_dual_x(const SymMat& x, int max_rounds = 1000, double x_norm_cap = 1e8);

/// Projected gradient descent on F over the feasible set, with a quasi-Newton
/// trial step and monotone backtracking. Requires 0 < delta < delta_max.
DualSolution solve_dual(const CovarianceEstimate& est, double delta,
                        const DualSolverOptions& opts = {});

}  // namespace rfact
