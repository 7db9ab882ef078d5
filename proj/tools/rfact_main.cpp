#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rfact/cli_io.hpp"
#include "rfact/errors.hpp"
#include "rfact/estimation.hpp"
#include "rfact/mtfa.hpp"
#include "rfact/recovery.hpp"
#include "rfact/simulator.hpp"

namespace fs = std::filesystem;
using namespace rfact;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string slurp_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  std::ostringstream body;
  body << in.rdbuf();
  return body.str();
}

CovarianceEstimate load_estimate(const RunConfig& cfg) {
  if (!cfg.input.empty()) {
    const Matrix data = read_matrix_csv(cfg.input);
    log_message(LogLevel::kInfo, "read " + std::to_string(data.rows()) + "x" +
                                     std::to_string(data.cols()) +
                                     " data record from " + cfg.input);
    return sample_covariance(data);
  }
  SymMat sigma = read_symmetric_csv(cfg.sigma_hat);
  log_message(LogLevel::kInfo, "read " + std::to_string(sigma.dim()) + "x" +
                                   std::to_string(sigma.dim()) +
                                   " covariance from " + cfg.sigma_hat);
  return CovarianceEstimate(std::move(sigma), cfg.num_samples);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir + ": cannot create directory: " + ec.message());
}

std::string joined(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

int run_delta_max(const RunConfig& cfg) {
  const auto start = Clock::now();
  CovarianceEstimate est = load_estimate(cfg);
  const DeltaMax dm = delta_max(est);
  std::printf("delta_max = %.17g\n", dm.delta_max);
  std::printf("kl_at_sigma_d = %.17g\n", dm.kl_at_sigma_d);
  if (!cfg.output_dir.empty()) {
    ensure_dir(cfg.output_dir);
    json doc;
    doc["version"] = "1.0";
    doc["config_echo"] = config_echo_json(cfg);
    doc["delta_max"] = dm.delta_max;
    doc["kl_at_sigma_d"] = dm.kl_at_sigma_d;
    doc["timings"] = {{"total", seconds_since(start)}};
    write_json_atomic(joined(cfg.output_dir, "delta_max.json"), doc);
    write_symmetric_csv(joined(cfg.output_dir, "sigma_d.csv"), dm.sigma_d);
  }
  return 0;
}

int run_mtfa(const RunConfig& cfg) {
  const auto start = Clock::now();
  CovarianceEstimate est = load_estimate(cfg);
  const auto solve_start = Clock::now();
  const MtfaSolution sol = solve_mtfa(est.sigma_hat());
  const double solve_s = seconds_since(solve_start);
  const int top = std::min(20, est.dim());
  const auto spectrum = singular_value_report(sol.R, top);
  const int rank = numerical_rank(sol.R, 1e-3);
  std::printf("objective = %.17g\n", sol.trace_R);
  std::printf("rank_R = %d\n", rank);
  std::printf("iterations = %d\n", sol.iterations);
  if (!cfg.output_dir.empty()) {
    ensure_dir(cfg.output_dir);
    json doc;
    doc["version"] = "1.0";
    doc["config_echo"] = config_echo_json(cfg);
    doc["objective"] = sol.trace_R;
    doc["rank_R"] = rank;
    doc["iterations"] = sol.iterations;
    doc["spectra"] = {{"R", spectrum}};
    doc["timings"] = {{"solve", solve_s}, {"total", seconds_since(start)}};
    write_json_atomic(joined(cfg.output_dir, "mtfa.json"), doc);
    write_symmetric_csv(joined(cfg.output_dir, "R.csv"), sol.R);
    write_symmetric_csv(joined(cfg.output_dir, "D.csv"), sol.D);
  }
  return 0;
}

int run_robust(const RunConfig& cfg) {
  const auto start = Clock::now();
  CovarianceEstimate est = load_estimate(cfg);
  double delta = cfg.delta;
  if (cfg.has_fraction) {
    const Tolerance tol = make_tolerance(est, cfg.delta_fraction);
    delta = tol.delta;
    std::printf("delta = %.17g (%.3g of delta_max %.17g)\n", delta,
                tol.fraction, tol.delta_max);
  } else {
    std::printf("delta = %.17g\n", delta);
  }

  DualSolverOptions opts;
  opts.tol = cfg.tol;
  opts.record_trace = cfg.trace;
  const auto solve_start = Clock::now();
  DualSolution sol = solve_dual(est, delta, opts);
  const double solve_s = seconds_since(solve_start);
  if (cfg.trace)
    for (const auto& row : sol.trace)
      std::fprintf(stderr, "it=%6d F=%.12g step=%.3e probe=%.3e\n",
                   row.iteration, row.objective, row.step, row.opt_measure);

  const auto recover_start = Clock::now();
  Decomposition dec = recover(sol, est, delta);
  const double recover_s = seconds_since(recover_start);

  std::printf("lambda_star = %.17g\n", sol.point.lambda);
  std::printf("objective = %.17g\n", dec.R.trace());
  std::printf("rank_R = %d\n", dec.rank_R);
  std::printf("iterations = %d\n", sol.iterations);
  std::printf("duality_gap = %.3e\n", dec.duality_gap);
  std::printf("kkt = %.3e %.3e %.3e\n", dec.cert.kkt.c1, dec.cert.kkt.c2,
              dec.cert.kkt.c3);
  std::printf("boundary_residual = %.3e\n", dec.cert.boundary);
  std::printf("certified = %s\n", dec.cert.pass ? "yes" : "no");

  if (!cfg.output_dir.empty()) {
    ensure_dir(cfg.output_dir);
    const std::map<std::string, double> timings = {
        {"solve", solve_s},
        {"recover", recover_s},
        {"total", seconds_since(start)}};
    emit_result_json(cfg, sol, dec, timings,
                     joined(cfg.output_dir, "result.json"));
    write_symmetric_csv(joined(cfg.output_dir, "R.csv"), dec.R);
    write_symmetric_csv(joined(cfg.output_dir, "D.csv"), dec.D);
    write_symmetric_csv(joined(cfg.output_dir, "Sigma_star.csv"), dec.Sigma);
  }
  return 0;
}

json seed_json(const SeedOutcome& s) {
  json j;
  j["seed"] = s.seed;
  j["ok"] = s.ok;
  j["error"] = s.error;
  j["delta"] = s.delta;
  j["delta_max"] = s.delta_max;
  j["lambda_star"] = s.lambda_star;
  j["objective"] = s.objective;
  j["duality_gap"] = s.duality_gap;
  j["cert_pass"] = s.cert_pass;
  j["mtfa"] = {{"rank", s.rank_mtfa},
               {"ratio", s.ratio_mtfa},
               {"spectrum", s.spectrum_mtfa}};
  j["robust"] = {{"rank", s.rank_robust},
                 {"ratio", s.ratio_robust},
                 {"spectrum", s.spectrum_robust}};
  json sweep = json::array();
  for (const auto& pt : s.sweep)
    sweep.push_back({{"fraction", pt.fraction},
                     {"ok", pt.ok},
                     {"rank", pt.rank},
                     {"ratio", pt.ratio},
                     {"trace_R", pt.trace_R},
                     {"lambda_star", pt.lambda_star}});
  j["sweep"] = sweep;
  return j;
}

json report_json(const RunConfig& cfg, const ExperimentReport& rep) {
  json doc;
  doc["version"] = "1.0";
  doc["config"] = {{"n", rep.spec.n},
                   {"r", rep.spec.r},
                   {"N", rep.num_samples},
                   {"model_seed", rep.spec.seed},
                   {"loading_scale", rep.spec.loading_scale},
                   {"noise_lo", rep.spec.noise_lo},
                   {"noise_hi", rep.spec.noise_hi},
                   {"delta_fraction", rep.delta_fraction},
                   {"seeds", cfg.seeds},
                   {"jobs", cfg.jobs},
                   {"sweep", cfg.sweep}};
  doc["true_model"] = {{"rank", rep.rank_true},
                       {"ratio", rep.ratio_true},
                       {"spectrum", rep.spectrum_true}};
  json seeds = json::array();
  for (const auto& s : rep.per_seed) seeds.push_back(seed_json(s));
  doc["per_seed"] = seeds;
  doc["medians"] = {{"mtfa_ratio", rep.median_ratio_mtfa},
                    {"robust_ratio", rep.median_ratio_robust},
                    {"rank_target_fraction", rep.rank_target_fraction}};
  json sweep = json::array();
  for (const auto& row : rep.sweep)
    sweep.push_back({{"fraction", row.fraction},
                     {"median_ratio", row.median_ratio},
                     {"rank_target_fraction", row.rank_target_fraction}});
  doc["sweep"] = sweep;
  return doc;
}

/// One spectrum table per seed: index, MTFA singular value, robust singular
/// value, one row per index.
void write_spectrum_csv(const std::string& path, const SeedOutcome& s) {
  const int len = static_cast<int>(
      std::min(s.spectrum_mtfa.size(), s.spectrum_robust.size()));
  Matrix table(len, 3);
  for (int i = 0; i < len; ++i) {
    table(i, 0) = i + 1;
    table(i, 1) = s.spectrum_mtfa[i];
    table(i, 2) = s.spectrum_robust[i];
  }
  write_matrix_csv(path, table);
}

std::string spectrum_name(const std::string& stem, std::uint64_t seed) {
  return stem + "_seed" + std::to_string(seed) + "_spectrum.csv";
}

int run_simulate(const RunConfig& cfg) {
  const auto start = Clock::now();
  FactorModelSpec spec;
  spec.n = cfg.n;
  spec.r = cfg.r;
  spec.loading_scale = cfg.loading_scale;
  spec.noise_lo = cfg.noise_lo;
  spec.noise_hi = cfg.noise_hi;
  spec.seed = cfg.model_seed;
  ExperimentOptions opts;
  opts.jobs = cfg.jobs;
  opts.sweep = cfg.sweep;

  const ExperimentReport rep =
      run_experiment(spec, cfg.num_samples, cfg.delta_fraction, cfg.seeds, opts);

  json doc = report_json(cfg, rep);
  doc["timings"] = {{"total", seconds_since(start)}};
  const fs::path out(cfg.out_file);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  write_json_atomic(cfg.out_file, doc);

  const std::string stem =
      (out.parent_path() / out.stem()).string();
  int ok_count = 0;
  for (const auto& s : rep.per_seed) {
    if (!s.ok) {
      log_message(LogLevel::kWarn, "seed " + std::to_string(s.seed) +
                                       " failed: " + s.error);
      continue;
    }
    ++ok_count;
    write_spectrum_csv(spectrum_name(stem, s.seed), s);
  }

  std::printf("seeds_ok = %d / %d\n", ok_count,
              static_cast<int>(rep.per_seed.size()));
  std::printf("true_ratio = %.3e\n", rep.ratio_true);
  std::printf("median_mtfa_ratio = %.6g\n", rep.median_ratio_mtfa);
  std::printf("median_robust_ratio = %.6g\n", rep.median_ratio_robust);
  std::printf("rank_target_fraction = %.3g\n", rep.rank_target_fraction);
  std::printf("report = %s\n", cfg.out_file.c_str());
  return 0;
}

double number_or_nan(const json& v) {
  return v.is_number() ? v.get<double>() : std::nan("");
}

int run_report(const RunConfig& cfg) {
  json doc;
  try {
    doc = json::parse(slurp_file(cfg.report_in));
  } catch (const json::exception& e) {
    throw ParseError(cfg.report_in + ": " + e.what());
  }
  ensure_dir(cfg.output_dir);
  const fs::path in(cfg.report_in);
  const std::string stem = joined(cfg.output_dir, in.stem().string());

  int written = 0;
  for (const auto& s : doc.at("per_seed")) {
    if (!s.at("ok").get<bool>()) continue;
    const auto mtfa = s.at("mtfa").at("spectrum").get<std::vector<double>>();
    const auto robust =
        s.at("robust").at("spectrum").get<std::vector<double>>();
    const int len = static_cast<int>(std::min(mtfa.size(), robust.size()));
    Matrix table(len, 3);
    for (int i = 0; i < len; ++i) {
      table(i, 0) = i + 1;
      table(i, 1) = mtfa[i];
      table(i, 2) = robust[i];
    }
    write_matrix_csv(
        spectrum_name(stem, s.at("seed").get<std::uint64_t>()), table);
    ++written;
  }

  const json& med = doc.at("medians");
  Matrix medians(1, 3);
  medians(0, 0) = number_or_nan(med.at("mtfa_ratio"));
  medians(0, 1) = number_or_nan(med.at("robust_ratio"));
  medians(0, 2) = number_or_nan(med.at("rank_target_fraction"));
  write_matrix_csv(stem + "_medians.csv", medians);

  const json& sweep = doc.at("sweep");
  if (!sweep.empty()) {
    Matrix table(static_cast<int>(sweep.size()), 3);
    int i = 0;
    for (const auto& row : sweep) {
      table(i, 0) = number_or_nan(row.at("fraction"));
      table(i, 1) = number_or_nan(row.at("median_ratio"));
      table(i, 2) = number_or_nan(row.at("rank_target_fraction"));
      ++i;
    }
    write_matrix_csv(stem + "_sweep.csv", table);
  }

  std::printf("spectra = %d\n", written);
  std::printf("output = %s\n", cfg.output_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  try {
    RunConfig cfg = parse_args(args);
    if (cfg.show_help) {
      std::fputs(cfg.help_text.c_str(), stdout);
      return 0;
    }
    if (cfg.show_defaults) {
      std::fputs(format_defaults().c_str(), stdout);
      return 0;
    }
    switch (cfg.command) {
      case Command::kDeltaMax: return run_delta_max(cfg);
      case Command::kMtfa: return run_mtfa(cfg);
      case Command::kRobust: return run_robust(cfg);
      case Command::kSimulate: return run_simulate(cfg);
      case Command::kReport: return run_report(cfg);
    }
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rfact: %s\n", e.what());
    return exit_code_for(e);
  }
}
