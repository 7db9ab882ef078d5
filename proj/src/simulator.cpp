#include "rfact/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "rfact/errors.hpp"
#include "rfact/estimation.hpp"
#include "rfact/mtfa.hpp"
#include "rfact/recovery.hpp"
#include "rfact/rng.hpp"

namespace rfact {

namespace {

constexpr uint64_t kModelStream = 1;
constexpr uint64_t kDataStream = 2;
constexpr double kRankRelTol = 1e-3;
constexpr int kSpectrumLength = 20;

void validate(const FactorModelSpec& spec) {
  if (spec.r < 1 || spec.r >= spec.n)
    throw std::invalid_argument("generate_model: need 1 <= r < n");
  if (!(spec.noise_lo > 0.0) || spec.noise_hi < spec.noise_lo)
    throw std::invalid_argument("generate_model: need 0 < noise_lo <= noise_hi");
  if (!(spec.loading_scale > 0.0))
    throw std::invalid_argument("generate_model: loading_scale must be positive");
}

double decay_ratio(const std::vector<double>& spectrum, int r) {
  const double lead = std::max(spectrum[r - 1], 0.0);
  const double next = std::max(spectrum[r], 0.0);
  return lead > 0.0 ? next / lead : 0.0;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

GroundTruth generate_model(const FactorModelSpec& spec) {
  validate(spec);
  CounterRng rng(spec.seed, kModelStream);

  GroundTruth gt;
  for (int attempt = 0; attempt < 100; ++attempt) {
    gt.a = Matrix(spec.n, spec.r);
    for (int i = 0; i < spec.n; ++i)
      for (int k = 0; k < spec.r; ++k)
        gt.a(i, k) = spec.loading_scale * rng.next_gaussian();
    gt.r_true = sym_sandwich(gt.a, SymMat::identity(spec.r));
    if (numerical_rank(gt.r_true, 1e-9) == spec.r) break;
    if (attempt == 99)
      throw NumericalBreakdown("generate_model: loadings stayed rank deficient");
  }

  gt.b.resize(spec.n);
  gt.d_true = SymMat(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    gt.b[i] = rng.next_uniform(spec.noise_lo, spec.noise_hi);
    gt.d_true(i, i) = gt.b[i] * gt.b[i];
  }
  gt.sigma = gt.r_true + gt.d_true;
  // rounding in the sum would leave sigma - r_true off d_true in the last
  // bit; rederive the diagonal so the decomposition holds exactly
  for (int i = 0; i < spec.n; ++i)
    gt.d_true(i, i) = gt.sigma(i, i) - gt.r_true(i, i);
  return gt;
}

Matrix sample_data(const GroundTruth& gt, int num_samples, std::uint64_t seed) {
  if (num_samples < 1)
    throw std::invalid_argument("sample_data: need at least one sample");
  const int n = gt.sigma.dim();
  auto ch = cholesky(gt.sigma);
  if (!ch) throw NotPositiveDefinite("sample_data: model covariance is not positive definite");
  const Matrix& l = ch->lower();

  CounterRng rng(seed, kDataStream);
  Matrix data(n, num_samples);
  std::vector<double> z(n);
  for (int j = 0; j < num_samples; ++j) {
    for (int i = 0; i < n; ++i) z[i] = rng.next_gaussian();
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int k = 0; k <= i; ++k) s += l(i, k) * z[k];
      data(i, j) = s;
    }
  }
  return data;
}

namespace {

SweepPoint robust_point(const CovarianceEstimate& est, double fraction, int r) {
  SweepPoint pt;
  pt.fraction = fraction;
  try {
    const Tolerance tol = make_tolerance(est, fraction);
    DualSolution sol = solve_dual(est, tol.delta);
    Decomposition dec = recover(sol, est, tol.delta);
    const auto spectrum = singular_value_report(dec.R, std::min(kSpectrumLength, est.dim()));
    pt.ratio = decay_ratio(spectrum, r);
    pt.rank = numerical_rank(dec.R, kRankRelTol);
    pt.trace_R = dec.R.trace();
    pt.lambda_star = sol.point.lambda;
    pt.ok = true;
  } catch (const std::exception&) {
    pt.ok = false;
  }
  return pt;
}

SeedOutcome run_seed(const GroundTruth& gt, const FactorModelSpec& spec, int num_samples,
                     double delta_fraction, std::uint64_t seed, bool sweep) {
  SeedOutcome out;
  out.seed = seed;
  try {
    const Matrix data = sample_data(gt, num_samples, seed);
    const CovarianceEstimate est = sample_covariance(data);
    const int k = std::min(kSpectrumLength, est.dim());

    const MtfaSolution fit = solve_mtfa(est.sigma_hat());
    out.spectrum_mtfa = singular_value_report(fit.R, k);
    out.rank_mtfa = numerical_rank(fit.R, kRankRelTol);
    out.ratio_mtfa = decay_ratio(out.spectrum_mtfa, spec.r);

    const Tolerance tol = make_tolerance(est, delta_fraction);
    out.delta = tol.delta;
    out.delta_max = tol.delta_max;
    DualSolution sol = solve_dual(est, tol.delta);
    Decomposition dec = recover(sol, est, tol.delta);
    out.spectrum_robust = singular_value_report(dec.R, k);
    out.rank_robust = numerical_rank(dec.R, kRankRelTol);
    out.ratio_robust = decay_ratio(out.spectrum_robust, spec.r);
    out.lambda_star = sol.point.lambda;
    out.objective = sol.objective;
    out.duality_gap = dec.duality_gap;
    out.cert_pass = dec.cert.pass;
    out.ok = true;

    if (sweep)
      for (int s = 1; s <= 9; ++s)
        out.sweep.push_back(robust_point(est, 0.1 * s, spec.r));
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const FactorModelSpec& spec, int num_samples,
                                double delta_fraction,
                                const std::vector<std::uint64_t>& seeds,
                                const ExperimentOptions& opts) {
  validate(spec);
  if (num_samples < 1)
    throw std::invalid_argument("run_experiment: need at least one sample");
  if (!(delta_fraction > 0.0) || !(delta_fraction < 1.0))
    throw std::invalid_argument("run_experiment: delta_fraction must lie in (0, 1)");

  ExperimentReport report;
  report.spec = spec;
  report.num_samples = num_samples;
  report.delta_fraction = delta_fraction;

  const GroundTruth gt = generate_model(spec);
  const MtfaSolution fit_true = solve_mtfa(gt.sigma);
  report.spectrum_true = singular_value_report(fit_true.R, std::min(kSpectrumLength, spec.n));
  report.rank_true = numerical_rank(fit_true.R, kRankRelTol);
  report.ratio_true = decay_ratio(report.spectrum_true, spec.r);

  report.per_seed.resize(seeds.size());
  const int jobs = std::max(1, std::min<int>(opts.jobs, static_cast<int>(seeds.size())));
  if (jobs <= 1) {
    for (size_t i = 0; i < seeds.size(); ++i)
      report.per_seed[i] =
          run_seed(gt, spec, num_samples, delta_fraction, seeds[i], opts.sweep);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (int wk = 0; wk < jobs; ++wk)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < seeds.size(); i = next.fetch_add(1))
          report.per_seed[i] =
              run_seed(gt, spec, num_samples, delta_fraction, seeds[i], opts.sweep);
      });
    for (auto& t : pool) t.join();
  }

  std::vector<double> ratios_mtfa, ratios_robust;
  int ok_count = 0, rank_hits = 0;
  for (const SeedOutcome& out : report.per_seed) {
    if (!out.ok) continue;
    ++ok_count;
    ratios_mtfa.push_back(out.ratio_mtfa);
    ratios_robust.push_back(out.ratio_robust);
    if (out.rank_robust == spec.r) ++rank_hits;
  }
  report.median_ratio_mtfa = median(std::move(ratios_mtfa));
  report.median_ratio_robust = median(std::move(ratios_robust));
  report.rank_target_fraction =
      ok_count > 0 ? static_cast<double>(rank_hits) / ok_count : 0.0;

  if (opts.sweep) {
    for (int s = 1; s <= 9; ++s) {
      SweepRow row;
      row.fraction = 0.1 * s;
      std::vector<double> ratios;
      int ok = 0, hits = 0;
      for (const SeedOutcome& out : report.per_seed) {
        if (!out.ok || out.sweep.size() < 9) continue;
        const SweepPoint& pt = out.sweep[s - 1];
        if (!pt.ok) continue;
        ++ok;
        ratios.push_back(pt.ratio);
        if (pt.rank == spec.r) ++hits;
      }
      row.median_ratio = median(std::move(ratios));
      row.rank_target_fraction = ok > 0 ? static_cast<double>(hits) / ok : 0.0;
      report.sweep.push_back(row);
    }
  }
  return report;
}

}  // namespace rfact
