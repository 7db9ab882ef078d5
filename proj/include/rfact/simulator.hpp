#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfact/matrix.hpp"
#include "rfact/symmat.hpp"

namespace rfact {

struct FactorModelSpec {
  int n = 0;
  int r = 0;
  double loading_scale = 1.0;
  double noise_lo = 0.1;   // diagonal noise amplitudes drawn uniformly
  double noise_hi = 1.0;   // from [noise_lo, noise_hi]; noise_lo > 0
  std::uint64_t seed = 0;
};

struct GroundTruth {
  Matrix a;                 // n x r factor loadings
  std::vector<double> b;    // diagonal noise amplitudes
  SymMat sigma;             // a a^T + diag(b^2)
  SymMat r_true;            // a a^T, rank exactly r
  SymMat d_true;            // diag(b^2)
};

/// Deterministic in spec.seed; redraws the loadings on a rank-deficient draw.
GroundTruth generate_model(const FactorModelSpec& spec);

/// n x num_samples record of i.i.d. zero-mean Gaussian columns with
/// covariance gt.sigma; deterministic in seed.
Matrix sample_data(const GroundTruth& gt, int num_samples, std::uint64_t seed);

struct SweepPoint {
  double fraction = 0.0;    // delta as a fraction of delta_max
  bool ok = false;
  double ratio = 0.0;       // sigma_{r+1}/sigma_r of the recovered R
  int rank = 0;             // numerical rank of R at rel_tol 1e-3
  double trace_R = 0.0;
  double lambda_star = 0.0;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;                   // empty when ok
  std::vector<double> spectrum_mtfa;   // leading singular values of R, minimum-trace fit
  std::vector<double> spectrum_robust; // leading singular values of the robust R
  int rank_mtfa = 0;                   // numerical ranks at rel_tol 1e-3
  int rank_robust = 0;
  double ratio_mtfa = 0.0;             // sigma_{r+1}/sigma_r
  double ratio_robust = 0.0;
  double delta = 0.0;
  double delta_max = 0.0;
  double lambda_star = 0.0;
  double objective = 0.0;
  double duality_gap = 0.0;
  bool cert_pass = false;
  std::vector<SweepPoint> sweep;       // populated only when the sweep is on
};

struct SweepRow {
  double fraction = 0.0;
  double median_ratio = 0.0;
  double rank_target_fraction = 0.0;   // share of ok seeds recovering rank r
};

struct ExperimentReport {
  FactorModelSpec spec;
  int num_samples = 0;
  double delta_fraction = 0.0;
  std::vector<double> spectrum_true;   // minimum-trace fit on the true sigma
  int rank_true = 0;
  double ratio_true = 0.0;
  std::vector<SeedOutcome> per_seed;   // ordered as the seeds argument
  double median_ratio_mtfa = 0.0;      // medians over ok seeds; NaN when none
  double median_ratio_robust = 0.0;
  double rank_target_fraction = 0.0;
  std::vector<SweepRow> sweep;
};

struct ExperimentOptions {
  int jobs = 1;
  bool sweep = false;                  // adds fractions 0.1..0.9 per seed
};

/// One ground truth from spec.seed; each entry of seeds drives its own data
/// record and downstream fits. Per-seed failures are captured in the outcome
/// and the batch continues. Identical inputs give identical reports for any
/// jobs value.
ExperimentReport run_experiment(const FactorModelSpec& spec, int num_samples,
                                double delta_fraction,
                                const std::vector<std::uint64_t>& seeds,
                                const ExperimentOptions& opts = {});

}  // namespace rfact
