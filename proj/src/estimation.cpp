#include "rfact/estimation.hpp"

#include <cmath>
#include <stdexcept>

#include "rfact/errors.hpp"

namespace rfact {

CovarianceEstimate::CovarianceEstimate(SymMat sigma_hat, int sample_count)
    : sigma_hat_(std::move(sigma_hat)), n_samples_(sample_count) {
  if (sample_count < 1) throw Error("CovarianceEstimate: sample count must be positive");
  auto f = cholesky(sigma_hat_);
  if (!f) throw NotPositiveDefinite("CovarianceEstimate: sigma_hat is not positive definite");
  logdet_ = f->logdet();
  sigma_hat_inv_ = f->inverse();
}

CovarianceEstimate sample_covariance(const Matrix& data, const SampleCovarianceOptions& opts) {
  const int n = data.rows();
  const int num_samples = data.cols();
  if (n < 1 || num_samples < 1) throw Error("sample_covariance: empty data");
  for (double v : data.data())
    if (!std::isfinite(v)) throw Error("sample_covariance: data contains non-finite values");

  std::vector<double> mean(n, 0.0);
  if (opts.center) {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int k = 0; k < num_samples; ++k) s += data(i, k);
      mean[i] = s / num_samples;
    }
  }

  const double denom = opts.bessel ? (num_samples > 1 ? num_samples - 1.0 : 1.0)
                                   : static_cast<double>(num_samples);
  SymMat s(n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < num_samples; ++k)
        acc += (data(i, k) - mean[i]) * (data(j, k) - mean[j]);
      s(i, j) = acc / denom;
    }
  if (opts.ridge > 0.0)
    for (int i = 0; i < n; ++i) s(i, i) += opts.ridge;

  if (opts.ridge <= 0.0 && num_samples < n)
    throw SingularCovariance(
        "sample_covariance: fewer samples than variables; the estimate is "
        "rank-deficient (consider the ridge regularization option)");
  if (!cholesky(s))
    throw SingularCovariance(
        "sample_covariance: estimate is not positive definite (rank-deficient "
        "data; consider the ridge regularization option)");
  return CovarianceEstimate(std::move(s), num_samples);
}

double kl_divergence(const SymMat& sigma, const CovarianceEstimate& est) {
  if (sigma.dim() != est.dim()) throw DimensionMismatch("kl_divergence: dimension mismatch");
  const double logdet_sigma = logdet_pd(sigma);  // throws NotPositiveDefinite
  const double tr = inner(sigma, est.sigma_hat_inv());
  return 0.5 * (-logdet_sigma + est.logdet_sigma_hat() + tr - est.dim());
}

DeltaMax delta_max(const CovarianceEstimate& est) {
  const int n = est.dim();
  DeltaMax out;
  // [S^-1 - chi(S^-1)] is diag(gamma), so the determinant splits.
  std::vector<double> inv_gamma(n);
  double sum_log_gamma = 0.0;
  for (int i = 0; i < n; ++i) {
    const double gamma_i = est.sigma_hat_inv()(i, i);
    if (!(gamma_i > 0.0))
      throw NotPositiveDefinite("delta_max: inverse has a nonpositive diagonal entry");
    inv_gamma[i] = 1.0 / gamma_i;
    sum_log_gamma += std::log(gamma_i);
  }
  out.delta_max = sum_log_gamma + est.logdet_sigma_hat();
  out.sigma_d = SymMat::diag(inv_gamma);
  out.kl_at_sigma_d = kl_divergence(out.sigma_d, est);
  if (std::abs(2.0 * out.kl_at_sigma_d - out.delta_max) >
      1e-10 * (1.0 + std::abs(out.delta_max)))
    throw NumericalBreakdown("delta_max: closed form and divergence at minimizer disagree");
  return out;
}

Tolerance make_tolerance(const CovarianceEstimate& est, double fraction) {
  if (!(fraction > 0.0) || !(fraction < 1.0))
    throw std::invalid_argument("make_tolerance: fraction must lie in (0,1)");
  const DeltaMax dm = delta_max(est);
  if (dm.delta_max <= 1e-12)
    throw DegenerateTolerance(
        "make_tolerance: delta_max is numerically zero (sigma_hat is diagonal, "
        "no nontrivial factor structure)");
  return Tolerance{fraction * dm.delta_max, dm.delta_max, fraction};
}

}  // namespace rfact
