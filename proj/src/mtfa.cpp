#include "rfact/mtfa.hpp"

#include <algorithm>
#include <cmath>

#include "rfact/errors.hpp"

namespace rfact {

namespace {

double frob_norm(const SymMat& m) { return std::sqrt(std::max(0.0, inner(m, m))); }

}  // namespace

MtfaSolution solve_mtfa(const SymMat& sigma, const MtfaOptions& opts) {
  const int n = sigma.dim();
  if (!cholesky(sigma)) throw NotPositiveDefinite("solve_mtfa: Sigma must be positive definite");

  // rho scaled to Sigma so the whole iteration is scale-covariant
  double rho = n / sigma.trace();

  SymMat r(n);
  SymMat d = SymMat::diag(sigma.diagonal());
  SymMat z(n);  // scaled multiplier, Y = rho * Z
  const double sigma_scale = frob_norm(sigma);

  MtfaSolution sol;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    // R step: PSD projection of (Sigma - D - Z) with eigenvalues shifted by 1/rho
    SymMat target = sigma - d - z;
    auto ed = eig_sym(target);
    for (double& w : ed.eigenvalues) w = std::max(0.0, w - 1.0 / rho);
    r = ed.reconstruct();

    // D step: diagonal clamp
    SymMat d_prev = d;
    d = SymMat(n);
    for (int i = 0; i < n; ++i) d(i, i) = std::max(0.0, sigma(i, i) - r(i, i) - z(i, i));

    SymMat gap = r + d - sigma;
    z += gap;

    const double primal = frob_norm(gap) / sigma_scale;
    const double dual = rho * frob_norm(d - d_prev) / sigma_scale;
    sol.iterations = it;
    sol.primal_residual = primal;
    sol.dual_residual = dual;
    if (std::max(primal, dual) <= opts.tol) {
      sol.converged = true;
      break;
    }

    // residual balancing
    if (primal > opts.rho_ratio * dual) {
      rho *= opts.rho_factor;
      z *= 1.0 / opts.rho_factor;
    } else if (dual > opts.rho_ratio * primal) {
      rho /= opts.rho_factor;
      z *= opts.rho_factor;
    }
  }

  sol.R = std::move(r);
  sol.D = std::move(d);
  sol.trace_R = sol.R.trace();
  sol.multiplier = z;
  sol.multiplier *= rho;
  return sol;
}

std::vector<double> singular_value_report(const SymMat& m, int k) {
  if (k < 0 || k > m.dim()) throw Error("singular_value_report: k must satisfy 0 <= k <= n");
  auto ed = eig_sym(m);
  std::vector<double> sv(ed.eigenvalues.size());
  for (size_t i = 0; i < sv.size(); ++i) sv[i] = std::abs(ed.eigenvalues[i]);
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  sv.resize(k);
  return sv;
}

}  // namespace rfact
