#include "rfact/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "rfact/errors.hpp"

namespace rfact {

namespace {

// coefficient of the packed unknown q_kl in the (i,j) entry of U q U^T
double entry_coeff(const Matrix& u, int i, int j, int k, int l) {
  return k == l ? u(i, k) * u(j, k) : u(i, k) * u(j, l) + u(i, l) * u(j, k);
}

}  // namespace

SymMat recover_sigma(const DualSolution& sol, const CovarianceEstimate& est) {
  if (sol.point.w.dim() != est.dim())
    throw DimensionMismatch("recover_sigma: solution does not match the estimate");
  return inv_pd(sol.point.w);
}

SymMat lambda_matrix(const DualSolution& sol) {
  SymMat lambda = SymMat::identity(sol.point.x.dim());
  lambda -= sol.point.x;
  return lambda;
}

KernelBasis kernel_basis(const SymMat& lambda, double rel_tol, bool require_nontrivial) {
  if (!(rel_tol > 0.0)) throw std::invalid_argument("kernel_basis: rel_tol must be positive");
  const int n = lambda.dim();
  auto ed = eig_sym(lambda);

  KernelBasis kb;
  kb.spectrum = ed.eigenvalues;
  double top = 0.0;
  for (double w : ed.eigenvalues) top = std::max(top, std::abs(w));
  kb.threshold = rel_tol * std::max(top, 1e-14);

  std::vector<int> kernel_cols;
  for (int i = 0; i < n; ++i)
    if (std::abs(ed.eigenvalues[i]) <= kb.threshold) kernel_cols.push_back(i);
  kb.r = static_cast<int>(kernel_cols.size());
  if (require_nontrivial && kb.r == 0)
    throw EmptyKernel("kernel_basis: Lambda has full numerical rank, so R = 0");

  kb.u = Matrix(n, kb.r);
  for (int c = 0; c < kb.r; ++c)
    for (int i = 0; i < n; ++i) kb.u(i, c) = ed.eigenvectors(i, kernel_cols[c]);
  return kb;
}

QSolution solve_for_q(const Matrix& u_tilde, const SymMat& sigma_star,
                      const SymMat& gamma, const RecoveryOptions& opts) {
  const int n = u_tilde.rows();
  const int r = u_tilde.cols();
  if (r < 1) throw std::invalid_argument("solve_for_q: kernel basis is empty");
  if (sigma_star.dim() != n || gamma.dim() != n)
    throw DimensionMismatch("solve_for_q: operand dimensions disagree");

  const int m = r * (r + 1) / 2;
  std::vector<std::pair<int, int>> unknowns;
  unknowns.reserve(m);
  for (int k = 0; k < r; ++k)
    for (int l = k; l < r; ++l) unknowns.emplace_back(k, l);

  // equations to satisfy: every off-diagonal entry, plus the diagonal
  // entries pinned by an active gamma_i
  std::vector<std::pair<int, int>> equations;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) equations.emplace_back(i, j);
  for (int i = 0; i < n; ++i)
    if (gamma(i, i) > opts.act_tol) equations.emplace_back(i, i);

  // normal equations, accumulated row by row
  SymMat normal(m);
  std::vector<double> rhs(m, 0.0);
  std::vector<double> row(m);
  for (auto [i, j] : equations) {
    for (int s = 0; s < m; ++s)
      row[s] = entry_coeff(u_tilde, i, j, unknowns[s].first, unknowns[s].second);
    const double b = sigma_star(i, j);
    for (int s = 0; s < m; ++s) {
      rhs[s] += b * row[s];
      for (int t = s; t < m; ++t) normal(s, t) += row[s] * row[t];
    }
  }

  auto ed = eig_sym(normal);
  const double eig_top = ed.eigenvalues.empty() ? 0.0 : std::abs(ed.eigenvalues.front());
  // cut below the noise floor of the normal equations; anything smaller is a
  // genuine null direction and gets the minimum-norm treatment
  const double eig_cut = 1e-13 * std::max(eig_top, 1e-300);

  QSolution qs;
  std::vector<double> coeffs(m, 0.0);
  for (int c = 0; c < m; ++c) {
    if (ed.eigenvalues[c] <= eig_cut) {
      qs.non_unique = true;
      continue;
    }
    double proj = 0.0;
    for (int s = 0; s < m; ++s) proj += ed.eigenvectors(s, c) * rhs[s];
    coeffs[c] = proj / ed.eigenvalues[c];
  }
  std::vector<double> q_packed(m, 0.0);
  for (int c = 0; c < m; ++c) {
    if (coeffs[c] == 0.0) continue;
    for (int s = 0; s < m; ++s) q_packed[s] += coeffs[c] * ed.eigenvectors(s, c);
  }

  qs.q = SymMat(r);
  for (int s = 0; s < m; ++s) qs.q(unknowns[s].first, unknowns[s].second) = q_packed[s];

  auto qed = eig_sym(qs.q);
  const double q_scale = 1.0 + std::abs(qed.eigenvalues.front());
  if (qed.eigenvalues.back() < -opts.proj_tol * q_scale) {
    std::ostringstream msg;
    msg << "solve_for_q: Q has eigenvalue " << qed.eigenvalues.back()
        << ", beyond the projection tolerance; dual tolerance too loose";
    throw IndefiniteQ(msg.str());
  }
  if (qed.eigenvalues.back() < 0.0) {
    for (double& w : qed.eigenvalues) w = std::max(0.0, w);
    qs.q = qed.reconstruct();
  }

  qs.r_mat = sym_sandwich(u_tilde, qs.q);
  double residual = 0.0;
  for (auto [i, j] : equations)
    residual = std::max(residual, std::abs(qs.r_mat(i, j) - sigma_star(i, j)));
  qs.residual = residual;
  if (residual > opts.residual_tol * sigma_star.max_abs()) {
    std::ostringstream msg;
    msg << "solve_for_q: equation residual " << residual
        << " exceeds tolerance; tighten the dual solve";
    throw InconsistentSystem(msg.str());
  }
  return qs;
}

CertReport certify(const Decomposition& dec, const DualSolution& sol,
                   const CovarianceEstimate& est, double delta) {
  CertReport rep;
  const double scale = 1.0 + dec.R.trace();
  SymMat lambda = lambda_matrix(sol);
  SymMat slack = dec.Sigma - dec.R;
  rep.kkt.c1 = std::abs(inner(lambda, dec.R)) / scale;
  rep.kkt.c2 = std::abs(inner(sol.gamma, slack)) / scale;
  rep.kkt.c3 = std::abs(inner(sol.theta, slack)) / scale;
  rep.gap = std::abs(dec.R.trace() + sol.objective) / scale;
  rep.boundary_raw = std::abs(2.0 * kl_divergence(dec.Sigma, est) - delta);
  rep.boundary = rep.boundary_raw / scale;
  const double worst = std::max({rep.kkt.c1, rep.kkt.c2, rep.kkt.c3, rep.gap, rep.boundary});
  rep.pass = worst <= 1e-5;
  return rep;
}

Decomposition recover(const DualSolution& sol, const CovarianceEstimate& est,
                      double delta, const RecoveryOptions& opts) {
  if (!sol.converged)
    throw NumericalBreakdown("recover: dual solver did not converge; no certificate possible");
  const int n = est.dim();

  Decomposition dec;
  dec.Sigma = recover_sigma(sol, est);
  dec.kernel = kernel_basis(lambda_matrix(sol), opts.kernel_rel_tol);
  if (dec.kernel.r == 0) {
    dec.R = SymMat(n);
    dec.Q = SymMat(0);
  } else {
    QSolution qs = solve_for_q(dec.kernel.u, dec.Sigma, sol.gamma, opts);
    dec.R = std::move(qs.r_mat);
    dec.Q = std::move(qs.q);
    dec.non_unique = qs.non_unique;
    dec.ls_residual = qs.residual;
  }

  dec.D = SymMat(n);
  for (int i = 0; i < n; ++i) dec.D(i, i) = dec.Sigma(i, i) - dec.R(i, i);
  dec.rank_R = numerical_rank(dec.R, opts.kernel_rel_tol);
  dec.kl_to_sigma_hat = kl_divergence(dec.Sigma, est);
  dec.duality_gap = std::abs(dec.R.trace() + sol.objective);
  dec.cert = certify(dec, sol, est, delta);
  dec.kkt = dec.cert.kkt;
  return dec;
}

Decomposition decompose(const CovarianceEstimate& est, double delta,
                        const DualSolverOptions& solver_opts, const RecoveryOptions& opts) {
  DualSolution sol = solve_dual(est, delta, solver_opts);
  return recover(sol, est, delta, opts);
}

}  // namespace rfact
