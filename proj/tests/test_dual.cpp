#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "rfact/dual_solver.hpp"
#include "rfact/errors.hpp"
#include "rfact/estimation.hpp"
#include "rfact/rng.hpp"
#include "test_helpers.hpp"

using namespace rfact;
using test::max_abs_diff;
using test::random_pd;
using test::random_sym;

namespace {

// Independent evaluation of the multiplier-space functional
// J(lambda, Gamma, Theta) = lambda (log|S^-1 + (chi(Theta)-Gamma)/lambda| + log|S| - delta).
double j_functional(const CovarianceEstimate& est, double lambda, const SymMat& gamma,
                    const SymMat& theta, double delta) {
  SymMat m = est.sigma_hat_inv() + (1.0 / lambda) * (chi(theta) - gamma);
  return lambda * (logdet_pd(m) + est.logdet_sigma_hat() - delta);
}

// Objective recomputed from scratch (no caching) for finite differencing.
double f_raw(const CovarianceEstimate& est, double lambda, const SymMat& x, double delta) {
  SymMat w = est.sigma_hat_inv() + (1.0 / lambda) * x;
  return -lambda * (logdet_pd(w) + est.logdet_sigma_hat() - delta);
}

// Draws a strictly feasible point: projected small X, W kept well conditioned
// by shrinking X until the smallest eigenvalue of W clears a margin.
DualPoint random_feasible_point(const CovarianceEstimate& est, CounterRng& rng,
                                double margin = 1e-2) {
  const int n = est.dim();
  SymMat x = project_dual_x(random_sym(n, rng, 0.3));
  double lambda = rng.next_uniform(0.7, 1.5);
  for (int shrink = 0; shrink < 60; ++shrink) {
    SymMat w = est.sigma_hat_inv() + (1.0 / lambda) * x;
    auto ch = cholesky(w);
    if (ch && eig_sym(w).eigenvalues.back() > margin) break;
    x *= 0.5;
  }
  return make_dual_point(est, lambda, x);
}

}  // namespace

TEST_CASE("objective at X = 0 is lambda times delta") {
  CounterRng rng(41);
  for (double lambda : {0.5, 1.0, 2.7}) {
    SymMat sigma = random_pd(4, rng);
    CovarianceEstimate est(sigma, 100);
    auto p = make_dual_point(est, lambda, SymMat(4));
    const double delta = 0.3;
    CHECK(dual_objective(p, est, delta) ==
          doctest::Approx(lambda * delta).epsilon(1e-9));
  }
}

TEST_CASE("scalar objective evaluation") {
  SymMat one(1);
  one(0, 0) = 1.0;
  CovarianceEstimate est(one, 10);
  SymMat x(1);
  x(0, 0) = -0.5;
  auto p = make_dual_point(est, 1.0, x);
  CHECK(dual_objective(p, est, 0.1) ==
        doctest::Approx(-(std::log(0.5) - 0.1)).epsilon(1e-12));
}

TEST_CASE("F(lambda, Theta - Gamma) equals -J(lambda, Gamma, Theta)") {
  CounterRng rng(42);
  int kept = 0;
  for (int t = 0; t < 30; ++t) {
    const int n = 4;
    SymMat sigma = random_pd(n, rng);
    CovarianceEstimate est(sigma, 100);
    SymMat theta = chi(random_sym(n, rng, 0.15));
    SymMat gamma(n);
    for (int i = 0; i < n; ++i) gamma(i, i) = rng.next_uniform(0.0, 0.3);
    const double lambda = rng.next_uniform(0.5, 2.0);
    const double delta = rng.next_uniform(0.05, 0.5);
    SymMat x = theta - gamma;
    try {
      auto p = make_dual_point(est, lambda, x);
      ++kept;
      const double f = dual_objective(p, est, delta);
      const double j = j_functional(est, lambda, gamma, theta, delta);
      CHECK(f == doctest::Approx(-j).epsilon(1e-12));
    } catch (const InfeasiblePoint&) {
      // draw left the feasible set; skip
    }
  }
  CHECK(kept >= 20);
}

TEST_CASE("gradient at X = 0") {
  CounterRng rng(43);
  SymMat sigma = random_pd(5, rng);
  CovarianceEstimate est(sigma, 100);
  auto p = make_dual_point(est, 1.3, SymMat(5));
  const double delta = 0.2;
  auto g = dual_gradient(p, est, delta);
  CHECK(g.d_lambda == doctest::Approx(delta).epsilon(1e-9));
  SymMat minus_sigma = sigma;
  minus_sigma *= -1.0;
  CHECK(max_abs_diff(g.d_x, minus_sigma) <= 1e-9 * (1.0 + sigma.max_abs()));
}

TEST_CASE("gradient matches central finite differences") {
  CounterRng rng(44);
  const double h = 1e-5;
  int points = 0;
  for (int n = 2; n <= 8; ++n) {
    for (int rep = 0; rep < 8 && points < 50; ++rep, ++points) {
      SymMat sigma = random_pd(n, rng);
      CovarianceEstimate est(sigma, 100);
      auto p = random_feasible_point(est, rng);
      const double delta = 0.3;
      auto g = dual_gradient(p, est, delta);

      // stacked packed-coordinate gradients: lambda first, then X slots
      std::vector<double> analytic, fd;
      analytic.push_back(g.d_lambda);
      fd.push_back((f_raw(est, p.lambda + h, p.x, delta) -
                    f_raw(est, p.lambda - h, p.x, delta)) /
                   (2 * h));
      for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
          analytic.push_back(i == j ? g.d_x(i, i) : 2.0 * g.d_x(i, j));
          SymMat xp = p.x, xm = p.x;
          xp(i, j) += h;
          xm(i, j) -= h;
          fd.push_back((f_raw(est, p.lambda, xp, delta) -
                        f_raw(est, p.lambda, xm, delta)) /
                       (2 * h));
        }
      }
      double num = 0, den = 0;
      for (size_t k = 0; k < fd.size(); ++k) {
        num += (fd[k] - analytic[k]) * (fd[k] - analytic[k]);
        den += analytic[k] * analytic[k];
      }
      CHECK(std::sqrt(num) <= 1e-5 * std::sqrt(den));
    }
  }
  CHECK(points == 50);
}

TEST_CASE("projection lands in the constraint set and fixes feasible points") {
  CounterRng rng(45);
  for (int t = 0; t < 20; ++t) {
    const int n = 2 + t % 6;
    SymMat y = project_dual_x(random_sym(n, rng, 2.0));
    for (int i = 0; i < n; ++i) CHECK(y(i, i) <= 0.0);
    auto ed = eig_sym(y);
    CHECK(ed.eigenvalues.front() <= 1.0 + 1e-10);
    SymMat again = project_dual_x(y);
    CHECK(max_abs_diff(again, y) <= 1e-12 * (1.0 + y.max_abs()));
  }

  const double d[] = {2.0, -1.0};
  SymMat proj = project_dual_x(SymMat::diag(d));
  CHECK(proj(0, 0) == doctest::Approx(0.0));
  CHECK(proj(1, 1) == doctest::Approx(-1.0));
  CHECK(proj(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("infeasible points are rejected with the violated condition") {
  SymMat sigma = SymMat::identity(3);
  sigma(0, 1) = 0.2;
  CovarianceEstimate est(sigma, 50);

  CHECK_THROWS_AS(make_dual_point(est, 0.0, SymMat(3)), InfeasiblePoint);
  CHECK_THROWS_AS(make_dual_point(est, -1.0, SymMat(3)), InfeasiblePoint);

  SymMat pos_diag(3);
  pos_diag(0, 0) = 0.5;
  CHECK_THROWS_AS(make_dual_point(est, 1.0, pos_diag), InfeasiblePoint);

  SymMat big(3);
  big(0, 1) = 2.0;  // eigenvalues +-2
  CHECK_THROWS_AS(make_dual_point(est, 1.0, big), InfeasiblePoint);

  SymMat one(1);
  one(0, 0) = 1.0;
  CovarianceEstimate scalar(one, 50);
  SymMat deep(1);
  deep(0, 0) = -3.0;  // W = 1 - 3 < 0
  CHECK_THROWS_AS(make_dual_point(scalar, 1.0, deep), InfeasiblePoint);

  CHECK_THROWS_AS(make_dual_point(est, 1.0, SymMat(2)), DimensionMismatch);
}

TEST_CASE("delta validation") {
  CovarianceEstimate diag_est(SymMat::identity(3), 50);
  CHECK_THROWS_AS(solve_dual(diag_est, 0.1), DeltaTooLarge);

  CounterRng rng(46);
  SymMat sigma = random_pd(3, rng);
  CovarianceEstimate est(sigma, 50);
  CHECK_THROWS_AS(solve_dual(est, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(solve_dual(est, -0.5), std::invalid_argument);
  CHECK_THROWS_AS(solve_dual(est, delta_max(est).delta_max), DeltaTooLarge);
}

TEST_CASE("convexity probe along random segments") {
  CounterRng rng(47);
  SymMat sigma = random_pd(4, rng);
  CovarianceEstimate est(sigma, 100);
  const double delta = 0.3;
  for (int t = 0; t < 15; ++t) {
    auto a = random_feasible_point(est, rng);
    auto b = random_feasible_point(est, rng);
    SymMat x_mid = a.x + b.x;
    x_mid *= 0.5;
    const double lambda_mid = 0.5 * (a.lambda + b.lambda);
    auto mid = make_dual_point(est, lambda_mid, x_mid);
    const double f_mid = dual_objective(mid, est, delta);
    const double f_avg = 0.5 * dual_objective(a, est, delta) +
                         0.5 * dual_objective(b, est, delta);
    CHECK(f_mid <= f_avg + 1e-10);
  }
}

TEST_CASE("solver converges with certificate structure on random instances") {
  CounterRng rng(48);
  for (int t = 0; t < 4; ++t) {
    const int n = 3 + t;
    SymMat sigma = random_pd(n, rng);
    CovarianceEstimate est(sigma, 200);
    const double delta = 0.5 * delta_max(est).delta_max;

    DualSolverOptions opts;
    opts.record_trace = true;
    auto sol = solve_dual(est, delta, opts);
    CHECK(sol.converged);
    CHECK(sol.grad_norm <= opts.tol * (1.0 + std::abs(sol.objective)));
    CHECK(sol.point.lambda > 0.0);
    CHECK(sol.objective < 0.0);

    // multiplier split is exact by construction
    for (int i = 0; i < n; ++i) {
      CHECK(sol.theta(i, i) == 0.0);
      CHECK(sol.gamma(i, i) >= 0.0);
    }
    CHECK(sol.gamma.max_abs_offdiag() == 0.0);
    CHECK(max_abs_diff(sol.theta - sol.gamma, sol.point.x) == 0.0);

    // descent is monotone across accepted iterations
    for (size_t k = 1; k < sol.trace.size(); ++k)
      CHECK(sol.trace[k].objective <=
            sol.trace[k - 1].objective + 1e-12 * (1.0 + std::abs(sol.trace[k].objective)));

    // the optimum sits on the divergence boundary
    SymMat sigma_star = inv_pd(sol.point.w);
    CHECK(std::abs(2.0 * kl_divergence(sigma_star, est) - delta) <= 1e-6 * (1.0 + delta));
  }
}

TEST_CASE("2x2 golden instance against a reduced brute-force oracle") {
  SymMat sigma(2);
  sigma(0, 0) = sigma(1, 1) = 1.0;
  sigma(0, 1) = 0.6;
  CovarianceEstimate est(sigma, 1000);
  const double delta = 0.5 * delta_max(est).delta_max;
  auto sol = solve_dual(est, delta);
  CHECK(sol.converged);
  CHECK(sol.point.lambda > 0.0);

  // exchange symmetry of the instance forces X* = [[a, c], [c, a]]; scan that
  // plane plus lambda and polish by coordinate descent
  double best_f = 1e300, best_lambda = 0, best_a = 0, best_c = 0;
  auto eval = [&](double lambda, double a, double c) {
    if (lambda <= 0 || a > 0 || std::abs(c) - a > 1.0) return 1e300;
    SymMat x(2);
    x(0, 0) = x(1, 1) = a;
    x(0, 1) = c;
    SymMat w = est.sigma_hat_inv() + (1.0 / lambda) * x;
    if (!cholesky(w)) return 1e300;
    return -lambda * (logdet_pd(w) + est.logdet_sigma_hat() - delta);
  };
  for (double lambda = 0.05; lambda <= 8.0; lambda += 0.05)
    for (double a = -1.0; a <= 0.0; a += 0.05)
      for (double c = -1.0; c <= 1.0; c += 0.05) {
        const double f = eval(lambda, a, c);
        if (f < best_f) {
          best_f = f;
          best_lambda = lambda;
          best_a = a;
          best_c = c;
        }
      }
  double h = 0.025;
  while (h > 1e-9) {
    bool moved = false;
    const double cand[][3] = {{h, 0, 0}, {-h, 0, 0}, {0, h, 0},
                              {0, -h, 0}, {0, 0, h}, {0, 0, -h}};
    for (auto& d : cand) {
      const double f = eval(best_lambda + d[0], best_a + d[1], best_c + d[2]);
      if (f < best_f) {
        best_f = f;
        best_lambda += d[0];
        best_a += d[1];
        best_c += d[2];
        moved = true;
      }
    }
    if (!moved) h *= 0.5;
  }

  CHECK(sol.objective <= best_f + 1e-7 * (1.0 + std::abs(best_f)));
  CHECK(sol.point.lambda == doctest::Approx(best_lambda).epsilon(1e-4));
  CHECK(sol.point.x(0, 0) == doctest::Approx(best_a).epsilon(1e-4));
  CHECK(sol.point.x(0, 1) == doctest::Approx(best_c).epsilon(1e-4));

  // regression values frozen from the first oracle-validated run
  CHECK(sol.point.lambda == doctest::Approx(1.6733624505487692).epsilon(1e-6));
  CHECK(sol.objective == doctest::Approx(-0.2922779980330979).epsilon(1e-6));
  CHECK(sol.point.x(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(sol.point.x(0, 0)) <= 1e-9);
}

TEST_CASE("restarts from perturbed feasible points agree") {
  CounterRng rng(49);
  SymMat sigma = random_pd(5, rng);
  CovarianceEstimate est(sigma, 200);
  const double delta = 0.5 * delta_max(est).delta_max;
  auto ref = solve_dual(est, delta);
  REQUIRE(ref.converged);
  for (int t = 0; t < 3; ++t) {
    DualSolverOptions opts;
    opts.lambda0 = rng.next_uniform(0.5, 2.0);
    opts.x0 = project_dual_x(random_sym(5, rng, 0.2));
    auto sol = solve_dual(est, delta, opts);
    CHECK(sol.converged);
    const double scale = 1.0 + std::abs(ref.point.lambda) + ref.point.x.max_abs();
    CHECK(std::abs(sol.point.lambda - ref.point.lambda) <= 1e-5 * scale);
    CHECK(max_abs_diff(sol.point.x, ref.point.x) <= 1e-5 * scale);
  }
}
