#include "rfact/dual_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rfact/errors.hpp"

namespace rfact {

namespace {

constexpr double kDiagTol = 1e-12;
constexpr double kEigTol = 1e-10;

SymMat compose_w(const CovarianceEstimate& est, double lambda, const SymMat& x) {
  return est.sigma_hat_inv() + (1.0 / lambda) * x;
}

double pair_norm(double dl, const SymMat& dx) {
  return std::sqrt(dl * dl + std::max(0.0, inner(dx, dx)));
}

double objective_value(const CovarianceEstimate& est, double lambda, double logdet_w,
                       double delta) {
  return -lambda * (logdet_w + est.logdet_sigma_hat() - delta);
}

struct Gradient {
  double d_lambda = 0.0;
  SymMat d_x;
};

Gradient gradient_at(const CovarianceEstimate& est, double lambda, const SymMat& x,
                     const SymMat& w_inv, double logdet_w, double delta) {
  Gradient g;
  g.d_lambda = -(logdet_w + est.logdet_sigma_hat() - delta) + inner(w_inv, x) / lambda;
  g.d_x = w_inv;
  g.d_x *= -1.0;
  return g;
}

struct SectionEval {
  bool ok = false;
  double f = 0.0;
  double slope = 0.0;      // dF/dlambda at fixed X
  double curvature = 0.0;  // d2F/dlambda2 = tr((W^{-1}X)^2)/lambda^3 >= 0
  double logdet_w = 0.0;
  SymMat w_inv;
};

SectionEval section_eval(const CovarianceEstimate& est, double lambda, const SymMat& x,
                         double delta) {
  SectionEval e;
  SymMat w = compose_w(est, lambda, x);
  auto ch = cholesky(w);
  if (!ch) return e;
  e.ok = true;
  e.logdet_w = ch->logdet();
  e.f = objective_value(est, lambda, e.logdet_w, delta);
  e.w_inv = ch->inverse();
  e.slope = -(e.logdet_w + est.logdet_sigma_hat() - delta) + inner(e.w_inv, x) / lambda;
  Matrix m = matmul(e.w_inv.to_dense(), x.to_dense());
  double t2 = 0.0;
  const int n = x.dim();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) t2 += m(i, j) * m(j, i);
  e.curvature = t2 / (lambda * lambda * lambda);
  return e;
}

struct SectionMin {
  double lambda = 0.0;
  SectionEval eval;
};

// exact minimization of the convex lambda section at fixed X: the slope is
// -infinity at the positive definiteness boundary of W, +delta at infinity,
// so for X != 0 a sign change brackets the minimizer
SectionMin minimize_lambda(const CovarianceEstimate& est, const SymMat& x, double delta,
                           double lambda_init, double lambda_floor, double lambda_cap) {
  double lam = std::clamp(lambda_init, lambda_floor, lambda_cap);
  SectionEval e = section_eval(est, lam, x, delta);
  for (int k = 0; !e.ok && k < 200 && lam < lambda_cap; ++k) {
    lam = std::min(lam * 2.0, lambda_cap);
    e = section_eval(est, lam, x, delta);
  }
  if (!e.ok)
    throw NumericalBreakdown("solve_dual: no positive definite W on the lambda section");
  if (inner(x, x) <= 0.0) return {lam, std::move(e)};

  double lo = lambda_floor, hi = lambda_cap;
  bool bracketed = false;
  if (e.slope > 0.0) {
    hi = lam;
    double probe = lam;
    for (int k = 0; k < 200 && probe > lambda_floor; ++k) {
      probe = std::max(probe * 0.5, lambda_floor);
      SectionEval pe = section_eval(est, probe, x, delta);
      if (!pe.ok || pe.slope < 0.0) {
        lo = probe;
        bracketed = true;
        break;
      }
      hi = probe;
      lam = probe;
      e = std::move(pe);
    }
    if (!bracketed) return {lam, std::move(e)};  // slope positive down to the floor
  } else if (e.slope < 0.0) {
    lo = lam;
    double probe = lam;
    for (int k = 0; k < 200 && probe < lambda_cap; ++k) {
      probe = std::min(probe * 2.0, lambda_cap);
      SectionEval pe = section_eval(est, probe, x, delta);
      if (pe.ok && pe.slope > 0.0) {
        hi = probe;
        lam = probe;
        e = std::move(pe);
        bracketed = true;
        break;
      }
      if (pe.ok) {
        lo = probe;
        lam = probe;
        e = std::move(pe);
      }
    }
    if (!bracketed) return {lam, std::move(e)};  // slope negative up to the cap
  } else {
    return {lam, std::move(e)};
  }

  for (int k = 0; k < 100; ++k) {
    if (std::abs(e.slope) <= 1e-12 * (1.0 + std::abs(e.f)) || hi - lo <= 1e-14 * hi) break;
    double cand = 0.5 * (lo + hi);
    if (e.curvature > 0.0 && std::isfinite(e.curvature)) {
      const double newton = lam - e.slope / e.curvature;
      if (newton > lo && newton < hi) cand = newton;
    }
    SectionEval ce = section_eval(est, cand, x, delta);
    if (!ce.ok) {
      lo = cand;
      continue;
    }
    if (ce.slope > 0.0)
      hi = cand;
    else
      lo = cand;
    lam = cand;
    e = std::move(ce);
  }
  return {lam, std::move(e)};
}

}  // namespace

DualPoint make_dual_point(const CovarianceEstimate& est, double lambda, SymMat x) {
  if (x.dim() != est.dim())
    throw DimensionMismatch("make_dual_point: X does not match the estimate dimension");
  if (!(lambda > 0.0)) throw InfeasiblePoint("make_dual_point: lambda must be positive");
  for (int i = 0; i < x.dim(); ++i)
    if (x(i, i) > kDiagTol)
      throw InfeasiblePoint("make_dual_point: X has a positive diagonal entry");
  auto ed = eig_sym(x);
  if (!ed.eigenvalues.empty() && ed.eigenvalues.front() > 1.0 + kEigTol)
    throw InfeasiblePoint("make_dual_point: X has an eigenvalue above one");

  DualPoint p;
  p.lambda = lambda;
  p.x = std::move(x);
  p.w = compose_w(est, lambda, p.x);
  auto ch = cholesky(p.w);
  if (!ch) throw InfeasiblePoint("make_dual_point: W = Sigma_hat^{-1} + X/lambda is not positive definite");
  p.logdet_w = ch->logdet();
  return p;
}

double dual_objective(const DualPoint& p, const CovarianceEstimate& est, double delta) {
  if (!(p.lambda > 0.0)) throw InfeasiblePoint("dual_objective: lambda must be positive");
  return objective_value(est, p.lambda, p.logdet_w, delta);
}

DualGradient dual_gradient(const DualPoint& p, const CovarianceEstimate& est, double delta) {
  if (!(p.lambda > 0.0)) throw InfeasiblePoint("dual_gradient: lambda must be positive");
  auto ch = cholesky(p.w);
  if (!ch) throw InfeasiblePoint("dual_gradient: W is not positive definite");
  SymMat w_inv = ch->inverse();
  Gradient g = gradient_at(est, p.lambda, p.x, w_inv, p.logdet_w, delta);
  return DualGradient{g.d_lambda, std::move(g.d_x)};
}

SymMat project_dual_x(const SymMat& x, int max_rounds, double x_norm_cap) {
  const int n = x.dim();
  const double scale = 1.0 + x.max_abs();
  SymMat y = x;
  SymMat p(n), q(n);
  for (int round = 0; round < max_rounds; ++round) {
    SymMat y_prev = y;

    SymMat t1 = y + p;
    auto ed = eig_sym(t1);
    if (!ed.eigenvalues.empty() && -ed.eigenvalues.back() > x_norm_cap) {
      std::ostringstream msg;
      msg << "project_dual_x: ||X||_2 = " << -ed.eigenvalues.back()
          << " exceeds the safeguard " << x_norm_cap;
      throw NumericalBreakdown(msg.str());
    }
    bool clipped = false;
    for (double& w : ed.eigenvalues)
      if (w > 1.0) {
        w = 1.0;
        clipped = true;
      }
    SymMat y1 = clipped ? ed.reconstruct() : t1;
    p = t1 - y1;

    SymMat t2 = y1 + q;
    SymMat y2 = t2;
    for (int i = 0; i < n; ++i) y2(i, i) = std::min(0.0, t2(i, i));
    q = t2 - y2;
    y = std::move(y2);

    if (round > 0 && (y - y_prev).max_abs() <= 1e-15 * scale) break;
  }
  return y;
}

DualSolution solve_dual(const CovarianceEstimate& est, double delta,
                        const DualSolverOptions& opts) {
  const int n = est.dim();
  if (!(delta > 0.0)) throw std::invalid_argument("solve_dual: delta must be positive");
  const DeltaMax dm = delta_max(est);
  if (delta >= dm.delta_max) {
    std::ostringstream msg;
    msg << "solve_dual: delta = " << delta << " must be below delta_max = " << dm.delta_max
        << " or the diagonal solution R = 0 is feasible";
    throw DeltaTooLarge(msg.str());
  }

  double lambda = opts.lambda0;
  SymMat x = opts.x0 ? project_dual_x(*opts.x0, opts.projection_rounds, opts.x_norm_cap)
                     : SymMat(n);
  if (!(lambda > opts.lambda_floor) || lambda > opts.lambda_cap)
    throw InfeasiblePoint("solve_dual: initial lambda outside the allowed range");

  {
    SymMat w = compose_w(est, lambda, x);
    if (!cholesky(w))
      throw InfeasiblePoint("solve_dual: initial point has W not positive definite");
  }
  // lambda is kept at the exact minimizer of its convex section throughout,
  // so the search and the quasi-Newton pairs live in X alone
  SectionMin cur = minimize_lambda(est, x, delta, lambda, opts.lambda_floor, opts.lambda_cap);
  lambda = cur.lambda;
  double f = cur.eval.f;
  Gradient grad = gradient_at(est, lambda, x, cur.eval.w_inv, cur.eval.logdet_w, delta);

  DualSolution sol;
  double step = 1.0;
  bool have_prev = false;
  SymMat s_x(n), y_x(n);
  double best_probe = std::numeric_limits<double>::infinity();
  int no_gain = 0;

  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    sol.iterations = iter;

    // unit-step probe: a point is stationary iff the projection of the full
    // gradient step returns it unchanged
    const double probe_lambda =
        std::clamp(lambda - grad.d_lambda, opts.lambda_floor, opts.lambda_cap);
    SymMat probe_x = project_dual_x(x - grad.d_x, opts.projection_rounds, opts.x_norm_cap);
    const double probe = pair_norm(probe_lambda - lambda, probe_x - x);
    sol.grad_norm = probe;
    if (opts.record_trace) sol.trace.push_back({iter, f, step, probe});
    if (probe <= opts.tol * (1.0 + std::abs(f))) {
      sol.converged = true;
      break;
    }
    if (probe < 0.999 * best_probe) {
      best_probe = probe;
      no_gain = 0;
    } else {
      ++no_gain;
    }

    // quasi-Newton trial step from the last informative pair of differences
    double trial = step;
    if (have_prev) {
      const double ss = inner(s_x, s_x);
      const double sy = inner(s_x, y_x);
      if (sy > 0.0 && std::isfinite(sy) && ss > 0.0)
        trial = std::clamp(ss / sy, 1e-14, 1e12);
    }

    bool accepted = false;
    SymMat cand_x(n);
    for (int bt = 0; bt < 80; ++bt) {
      cand_x = project_dual_x(x - trial * grad.d_x, opts.projection_rounds, opts.x_norm_cap);
      SymMat cand_w = compose_w(est, lambda, cand_x);
      auto cand_ch = cholesky(cand_w);
      if (!cand_ch) {
        trial *= opts.backtrack;
        continue;
      }
      const double cand_f =
          objective_value(est, lambda, cand_ch->logdet(), delta);
      const double decrease = inner(grad.d_x, cand_x - x);
      // rounding slack keeps the search alive once true decrease drops below
      // machine precision; the iterate map still contracts toward the optimum
      const double slack =
          4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(f));
      if (cand_f <= f + opts.armijo_c * decrease + slack) {
        accepted = true;
        break;
      }
      trial *= opts.backtrack;
    }

    SymMat x_old = x;
    if (accepted) {
      x = std::move(cand_x);
      step = trial;
    } else {
      if (lambda < 10.0 * opts.lambda_floor || lambda > 0.1 * opts.lambda_cap) {
        std::ostringstream msg;
        msg << "solve_dual: line search stalled with lambda = " << lambda
            << " pinned at a safeguard bound (delta too close to delta_max?)";
        throw NumericalBreakdown(msg.str());
      }
      // the descent signal is below evaluation noise here, which defeats any
      // comparison-based search, while the projected unit step still
      // contracts toward the stationary point; take it unconditionally until
      // the probe stops improving
      SymMat unit_w = compose_w(est, lambda, probe_x);
      if (!cholesky(unit_w) || no_gain > 300) break;
      x = std::move(probe_x);
    }

    // free ascent along the homogeneity ray: scaling (lambda, X) by alpha
    // scales F by alpha and leaves W and the gradient untouched, so pulling
    // the top eigenvalue of X up to its bound removes the flat direction
    // from the search at no cost
    {
      auto xe = eig_sym(x);
      const double mu = xe.eigenvalues.empty() ? 0.0 : xe.eigenvalues.front();
      const double xnorm = xe.eigenvalues.empty()
                               ? 0.0
                               : std::max(std::abs(xe.eigenvalues.front()),
                                          std::abs(xe.eigenvalues.back()));
      if (f < 0.0 && mu > 1e-10 && mu < 1.0 - 1e-6) {
        double alpha = std::min(1.0 / mu, 1e3);
        alpha = std::min(alpha, 0.5 * opts.lambda_cap / lambda);
        if (xnorm > 0.0) alpha = std::min(alpha, 0.5 * opts.x_norm_cap / xnorm);
        if (alpha > 1.0) {
          lambda *= alpha;
          x *= alpha;
        }
      }
    }

    cur = minimize_lambda(est, x, delta, lambda, opts.lambda_floor, opts.lambda_cap);
    lambda = cur.lambda;
    f = cur.eval.f;
    Gradient grad_new = gradient_at(est, lambda, x, cur.eval.w_inv, cur.eval.logdet_w, delta);

    SymMat new_s = x - x_old;
    const double move = std::sqrt(std::max(0.0, inner(new_s, new_s)));
    if (move > 1e-13 * (1.0 + std::sqrt(std::max(0.0, inner(x, x))))) {
      s_x = std::move(new_s);
      y_x = grad_new.d_x - grad.d_x;
      have_prev = true;
    } else {
      // a null step carries no curvature information, and the stale pair
      // would keep proposing the same collapsed trial; drop it and restart
      // from the unit step the stationarity probe is measured at
      have_prev = false;
      step = 1.0;
    }
    grad = std::move(grad_new);
  }

  sol.point = make_dual_point(est, lambda, std::move(x));
  sol.theta = chi(sol.point.x);
  sol.gamma = SymMat(n);
  for (int i = 0; i < n; ++i) sol.gamma(i, i) = -sol.point.x(i, i);
  sol.objective = f;
  return sol;
}

}  // namespace rfact
