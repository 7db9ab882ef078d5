#pragma once

#include "rfact/matrix.hpp"
#include "rfact/symmat.hpp"

namespace rfact {

/// Sample covariance with cached inverse and log-determinant.
class CovarianceEstimate {
 public:
  /// Validates sigma_hat > 0 and caches its inverse and log|.|.
  CovarianceEstimate(SymMat sigma_hat, int sample_count);

  int dim() const { return sigma_hat_.dim(); }
  int sample_count() const { return n_samples_; }
  const SymMat& sigma_hat() const { return sigma_hat_; }
  const SymMat& sigma_hat_inv() const { return sigma_hat_inv_; }
  double logdet_sigma_hat() const { return logdet_; }

 private:
  SymMat sigma_hat_;
  SymMat sigma_hat_inv_;
  double logdet_ = 0.0;
  int n_samples_ = 0;
};

struct SampleCovarianceOptions {
  bool center = false;     // the model is zero-mean; centering is opt-in
  bool bessel = false;     // 1/(N-1) instead of 1/N
  double ridge = 0.0;      // adds ridge * I before validation
};

/// (1/N) sum_k x_k x_k^T from an n-by-N data record (columns are samples).
CovarianceEstimate sample_covariance(const Matrix& data,
                                     const SampleCovarianceOptions& opts = {});

/// Gaussian KL divergence D(Sigma || Sigma_hat) for zero-mean distributions.
double kl_divergence(const SymMat& sigma, const CovarianceEstimate& est);

struct DeltaMax {
  double delta_max = 0.0;   // log|[S^-1 - chi(S^-1)] S| for S = sigma_hat
  SymMat sigma_d;           // diagonal minimizer diag(1/gamma_i)
  double kl_at_sigma_d = 0.0;
};

/// Closed form for the divergence ceiling; also returns the diagonal
/// matrix attaining the minimum divergence. Note delta_max equals twice
/// the minimal divergence; both numbers are surfaced so callers can pick
/// their convention explicitly.
DeltaMax delta_max(const CovarianceEstimate& est);

struct Tolerance {
  double delta = 0.0;
  double delta_max = 0.0;
  double fraction = 0.0;
};

/// delta = fraction * delta_max with 0 < fraction < 1.
Tolerance make_tolerance(const CovarianceEstimate& est, double fraction);

}  // namespace rfact
