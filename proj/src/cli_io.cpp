#include "rfact/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"

#include "rfact/dual_solver.hpp"
#include "rfact/errors.hpp"
#include "rfact/mtfa.hpp"

namespace rfact {

namespace {

constexpr const char* kSchemaVersion = "1.0";
constexpr double kAsymmetryRelTol = 1e-9;
constexpr double kRankRelTol = 1e-3;
constexpr double kDefaultDeltaFraction = 0.5;
constexpr int kDefaultSampleCount = 1000;
constexpr const char* kDefaultSeeds = "0..19";

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v,
                           std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void atomic_replace(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp + ": cannot open for writing");
    out << body;
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw IoError(tmp + ": write failed");
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError(path + ": rename from temp file failed");
  }
}

std::string csv_body(const Matrix& m) {
  std::string body;
  body.reserve(static_cast<size_t>(m.rows()) * m.cols() * 20);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      if (j > 0) body += ',';
      body += shortest(m(i, j));
    }
    body += '\n';
  }
  return body;
}

std::string trimmed(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& token, const std::string& path, int line,
                  int field) {
  std::ostringstream at;
  at << path << ": line " << line << ", field " << field;
  if (token.empty()) throw ParseError(at.str() + ": empty field");
  double v = 0.0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw ParseError(at.str() + ": unparsable value '" + token + "'");
  if (!std::isfinite(v))
    throw ParseError(at.str() + ": non-finite value '" + token + "'");
  return v;
}

std::uint64_t parse_seed_token(const std::string& token) {
  std::uint64_t v = 0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw UsageError("--seeds: unparsable entry '" + token + "'");
  return v;
}

void require_readable(const std::string& path, const char* flag) {
  if (!std::filesystem::exists(path))
    throw UsageError(std::string(flag) + ": no such file: " + path);
}

}  // namespace

const char* command_name(Command c) {
  switch (c) {
    case Command::kDeltaMax: return "delta-max";
    case Command::kMtfa: return "mtfa";
    case Command::kRobust: return "robust";
    case Command::kSimulate: return "simulate";
    case Command::kReport: return "report";
  }
  return "?";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trimmed(part);
    if (part.empty()) throw UsageError("--seeds: empty entry in '" + text + "'");
    const size_t dots = part.find("..");
    if (dots == std::string::npos) {
      seeds.push_back(parse_seed_token(part));
      continue;
    }
    const std::uint64_t lo = parse_seed_token(part.substr(0, dots));
    const std::uint64_t hi = parse_seed_token(part.substr(dots + 2));
    if (hi < lo)
      throw UsageError("--seeds: descending range '" + part + "'");
    if (hi - lo >= 100000)
      throw UsageError("--seeds: range '" + part + "' is implausibly large");
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  if (seeds.empty()) throw UsageError("--seeds: no seeds in '" + text + "'");
  return seeds;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 2;
  if (dynamic_cast<const ParseError*>(&e)) return 3;
  if (dynamic_cast<const AsymmetryError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e)) return 3;
  return 1;
}

std::vector<DefaultEntry> default_table() {
  const DualSolverOptions dual;
  const MtfaOptions mtfa;
  const RecoveryOptions rec;
  const FactorModelSpec sim;
  return {
      {"delta_fraction", format_value(kDefaultDeltaFraction),
       "divergence budget as a fraction of delta_max"},
      {"dual.tol", format_value(dual.tol),
       "stationarity tolerance on the projected-gradient probe"},
      {"dual.max_iterations", std::to_string(dual.max_iterations),
       "iteration cap of the dual solver"},
      {"dual.projection_rounds", std::to_string(dual.projection_rounds),
       "alternating-projection rounds per feasibility projection"},
      {"mtfa.tol", format_value(mtfa.tol),
       "relative primal/dual residual tolerance of the splitting solver"},
      {"mtfa.max_iterations", std::to_string(mtfa.max_iterations),
       "iteration cap of the splitting solver"},
      {"recovery.kernel_rel_tol", format_value(rec.kernel_rel_tol),
       "kernel cut relative to the top eigenvalue of Lambda"},
      {"recovery.act_tol", format_value(rec.act_tol),
       "gamma entries above this count as active"},
      {"recovery.residual_tol", format_value(rec.residual_tol),
       "least-squares inconsistency threshold"},
      {"csv.asymmetry_rel_tol", format_value(kAsymmetryRelTol),
       "asymmetry forgiven (and averaged away) on symmetric inputs"},
      {"rank.rel_tol", format_value(kRankRelTol),
       "singular values above rel_tol * sigma_1 count toward the rank"},
      {"simulate.n", std::to_string(50), "variable count"},
      {"simulate.r", std::to_string(4), "factor count"},
      {"simulate.N", std::to_string(kDefaultSampleCount),
       "samples per data record"},
      {"simulate.loading_scale", format_value(sim.loading_scale),
       "scale of the standard-normal factor loadings"},
      {"simulate.noise_range",
       format_value(sim.noise_lo) + ".." + format_value(sim.noise_hi),
       "uniform range of the idiosyncratic noise deviations"},
      {"simulate.seeds", kDefaultSeeds, "data-record seeds"},
      {"simulate.jobs", std::to_string(1), "worker threads over seeds"},
  };
}

std::string format_defaults() {
  size_t name_w = 0;
  size_t value_w = 0;
  const auto table = default_table();
  for (const auto& e : table) {
    name_w = std::max(name_w, e.name.size());
    value_w = std::max(value_w, e.value.size());
  }
  std::ostringstream out;
  for (const auto& e : table) {
    out << e.name << std::string(name_w - e.name.size() + 2, ' ') << e.value
        << std::string(value_w - e.value.size() + 2, ' ') << e.what << '\n';
  }
  return out.str();
}

RunConfig parse_args(const std::vector<std::string>& args) {
  RunConfig cfg;
  CLI::App app{"low-rank plus diagonal covariance decomposition"};
  app.name("rfact");
  app.require_subcommand(0, 1);
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults,
               "print the defaults table and exit");

  const DualSolverOptions dual_defaults;
  cfg.tol = dual_defaults.tol;

  std::string est_input;
  std::string est_sigma;
  int est_samples = 1;
  auto add_estimate_flags = [&](CLI::App* sub) {
    sub->add_option("--input", est_input,
                    "CSV data record, one column per sample");
    sub->add_option("--sigma-hat", est_sigma, "CSV covariance matrix");
    sub->add_option("--N", est_samples,
                    "sample count tag for --sigma-hat inputs")
        ->capture_default_str();
    sub->add_option("--output", cfg.output_dir,
                    "directory for matrix and JSON artifacts");
  };

  CLI::App* cmd_delta = app.add_subcommand(
      "delta-max", "divergence ceiling of an estimated covariance");
  add_estimate_flags(cmd_delta);

  CLI::App* cmd_mtfa = app.add_subcommand(
      "mtfa", "minimum-trace decomposition of the estimate as given");
  add_estimate_flags(cmd_mtfa);

  CLI::App* cmd_robust = app.add_subcommand(
      "robust", "decomposition over a divergence ball around the estimate");
  add_estimate_flags(cmd_robust);
  CLI::Option* opt_delta =
      cmd_robust->add_option("--delta", cfg.delta, "divergence budget");
  CLI::Option* opt_fraction = cmd_robust->add_option(
      "--delta-fraction", cfg.delta_fraction, "budget as a fraction of delta_max");
  cmd_robust->add_option("--tol", cfg.tol, "dual solver stationarity tolerance")
      ->capture_default_str();
  cmd_robust->add_flag("--trace", cfg.trace,
                       "log one line per solver iteration");

  CLI::App* cmd_sim = app.add_subcommand(
      "simulate", "factor-model experiment over seeded data records");
  int sim_samples = kDefaultSampleCount;
  std::string seeds_text = kDefaultSeeds;
  cfg.n = 50;
  cfg.r = 4;
  const FactorModelSpec sim_defaults;
  cfg.loading_scale = sim_defaults.loading_scale;
  cfg.noise_lo = sim_defaults.noise_lo;
  cfg.noise_hi = sim_defaults.noise_hi;
  cfg.delta_fraction = kDefaultDeltaFraction;
  cmd_sim->add_option("--n", cfg.n, "variable count")->capture_default_str();
  cmd_sim->add_option("--r", cfg.r, "factor count")->capture_default_str();
  cmd_sim->add_option("--N", sim_samples, "samples per data record")
      ->capture_default_str();
  cmd_sim->add_option("--seed", cfg.model_seed, "ground-truth model seed")
      ->capture_default_str();
  cmd_sim->add_option("--seeds", seeds_text,
                      "data-record seeds, e.g. 0..19 or 0,3,7")
      ->capture_default_str();
  cmd_sim->add_option("--delta-fraction", cfg.delta_fraction,
                      "divergence budget as a fraction of delta_max")
      ->capture_default_str();
  cmd_sim->add_option("--loading-scale", cfg.loading_scale,
                      "scale of the standard-normal loadings")
      ->capture_default_str();
  cmd_sim->add_option("--noise-lo", cfg.noise_lo,
                      "lower end of the noise deviation range")
      ->capture_default_str();
  cmd_sim->add_option("--noise-hi", cfg.noise_hi,
                      "upper end of the noise deviation range")
      ->capture_default_str();
  cmd_sim->add_option("--jobs", cfg.jobs, "worker threads over seeds")
      ->capture_default_str();
  cmd_sim->add_flag("--sweep", cfg.sweep,
                    "also solve at delta fractions 0.1 through 0.9 per seed");
  cmd_sim->add_option("--out", cfg.out_file, "report JSON path");

  CLI::App* cmd_report = app.add_subcommand(
      "report", "plot-ready CSV tables from a simulate report");
  cmd_report->add_option("--in", cfg.report_in, "simulate report JSON");
  cmd_report->add_option("--output", cfg.output_dir, "directory for the CSVs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    cfg.show_help = true;
    cfg.help_text = app.help("", CLI::AppFormatMode::All);
    return cfg;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  if (print_defaults) {
    cfg.show_defaults = true;
    return cfg;
  }
  if (app.get_subcommands().empty())
    throw UsageError(
        "missing command: one of delta-max, mtfa, robust, simulate, report");

  const CLI::App* sub = app.get_subcommands().front();
  if (sub == cmd_delta) cfg.command = Command::kDeltaMax;
  if (sub == cmd_mtfa) cfg.command = Command::kMtfa;
  if (sub == cmd_robust) cfg.command = Command::kRobust;
  if (sub == cmd_sim) cfg.command = Command::kSimulate;
  if (sub == cmd_report) cfg.command = Command::kReport;

  switch (cfg.command) {
    case Command::kDeltaMax:
    case Command::kMtfa:
    case Command::kRobust: {
      if (est_input.empty() == est_sigma.empty())
        throw UsageError("exactly one of --input and --sigma-hat is required");
      cfg.input = est_input;
      cfg.sigma_hat = est_sigma;
      cfg.num_samples = est_samples;
      if (cfg.num_samples < 1) throw UsageError("--N must be positive");
      if (!cfg.input.empty()) require_readable(cfg.input, "--input");
      if (!cfg.sigma_hat.empty()) require_readable(cfg.sigma_hat, "--sigma-hat");
      if (cfg.command == Command::kRobust) {
        cfg.has_delta = opt_delta->count() > 0;
        cfg.has_fraction = opt_fraction->count() > 0;
        if (cfg.has_delta == cfg.has_fraction)
          throw UsageError(
              "exactly one of --delta and --delta-fraction is required");
        if (cfg.has_delta && cfg.delta <= 0.0)
          throw UsageError("--delta must be positive");
        if (cfg.has_fraction &&
            (cfg.delta_fraction <= 0.0 || cfg.delta_fraction >= 1.0))
          throw UsageError("--delta-fraction must lie strictly in (0,1)");
        if (cfg.tol <= 0.0) throw UsageError("--tol must be positive");
      }
      break;
    }
    case Command::kSimulate: {
      cfg.num_samples = sim_samples;
      if (cfg.n < 2) throw UsageError("--n must be at least 2");
      if (cfg.r < 1 || cfg.r >= cfg.n)
        throw UsageError("--r must satisfy 1 <= r < n");
      if (cfg.num_samples < 1) throw UsageError("--N must be positive");
      if (cfg.delta_fraction <= 0.0 || cfg.delta_fraction >= 1.0)
        throw UsageError("--delta-fraction must lie strictly in (0,1)");
      if (cfg.jobs < 1) throw UsageError("--jobs must be positive");
      cfg.seeds = parse_seed_list(seeds_text);
      if (cfg.out_file.empty()) throw UsageError("simulate requires --out");
      break;
    }
    case Command::kReport: {
      if (cfg.report_in.empty()) throw UsageError("report requires --in");
      require_readable(cfg.report_in, "--in");
      if (cfg.output_dir.empty()) throw UsageError("report requires --output");
      break;
    }
  }
  return cfg;
}

Matrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  int width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trimmed(line).empty()) continue;
    std::vector<double> row;
    std::stringstream fields(line);
    std::string token;
    int field_no = 0;
    while (std::getline(fields, token, ',')) {
      ++field_no;
      row.push_back(parse_cell(trimmed(token), path, line_no, field_no));
    }
    if (line.back() == ',')
      row.push_back(parse_cell("", path, line_no, field_no + 1));
    if (width == 0) width = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != width) {
      std::ostringstream msg;
      msg << path << ": line " << line_no << " has " << row.size()
          << " fields, expected " << width;
      throw ParseError(msg.str());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path + ": no data rows");
  Matrix m(static_cast<int>(rows.size()), width);
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < width; ++j) m(i, j) = rows[i][j];
  return m;
}

SymMat as_symmetric(const Matrix& m, double rel_tol) {
  if (m.rows() != m.cols()) {
    std::ostringstream msg;
    msg << "matrix is " << m.rows() << "x" << m.cols()
        << ", a symmetric matrix must be square";
    throw AsymmetryError(msg.str());
  }
  const int n = m.rows();
  double scale = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) scale = std::max(scale, std::abs(m(i, j)));
  double worst = 0.0;
  int wi = 0;
  int wj = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double gap = std::abs(m(i, j) - m(j, i));
      if (gap > worst) {
        worst = gap;
        wi = i;
        wj = j;
      }
    }
  if (worst > rel_tol * scale) {
    std::ostringstream msg;
    msg << "asymmetry " << format_value(worst) << " at (" << wi + 1 << ","
        << wj + 1 << ") exceeds " << format_value(rel_tol * scale) << " = "
        << format_value(rel_tol) << " * max|entry|";
    throw AsymmetryError(msg.str());
  }
  SymMat s(n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) s(i, j) = 0.5 * (m(i, j) + m(j, i));
  return s;
}

SymMat read_symmetric_csv(const std::string& path, double rel_tol) {
  try {
    return as_symmetric(read_matrix_csv(path), rel_tol);
  } catch (const AsymmetryError& e) {
    throw AsymmetryError(path + ": " + e.what());
  }
}

void write_matrix_csv(const std::string& path, const Matrix& m) {
  atomic_replace(path, csv_body(m));
}

void write_symmetric_csv(const std::string& path, const SymMat& m) {
  write_matrix_csv(path, m.to_dense());
}

nlohmann::json config_echo_json(const RunConfig& cfg) {
  nlohmann::json echo;
  echo["command"] = command_name(cfg.command);
  echo["input"] = cfg.input;
  echo["sigma_hat"] = cfg.sigma_hat;
  echo["num_samples"] = cfg.num_samples;
  echo["delta"] = cfg.has_delta ? nlohmann::json(cfg.delta) : nlohmann::json();
  echo["delta_fraction"] =
      cfg.has_fraction ? nlohmann::json(cfg.delta_fraction) : nlohmann::json();
  echo["tol"] = cfg.tol;
  echo["trace"] = cfg.trace;
  echo["output_dir"] = cfg.output_dir;
  return echo;
}

nlohmann::json result_json(const RunConfig& cfg, const DualSolution& sol,
                           const Decomposition& dec,
                           const std::map<std::string, double>& timings) {
  nlohmann::json doc;
  doc["version"] = kSchemaVersion;
  doc["config_echo"] = config_echo_json(cfg);
  doc["lambda_star"] = sol.point.lambda;
  doc["objective"] = dec.R.trace();
  doc["duality_gap"] = dec.duality_gap;
  doc["kkt"] = {{"c1", dec.cert.kkt.c1},
                {"c2", dec.cert.kkt.c2},
                {"c3", dec.cert.kkt.c3}};
  doc["boundary_residual"] = dec.cert.boundary;
  doc["rank_R"] = dec.rank_R;
  const int top = std::min(20, dec.R.dim());
  doc["spectra"] = {{"R", singular_value_report(dec.R, top)},
                    {"Lambda", dec.kernel.spectrum}};
  doc["timings"] = timings;
  return doc;
}

void write_json_atomic(const std::string& path, const nlohmann::json& doc) {
  atomic_replace(path, doc.dump(2) + "\n");
}

void emit_result_json(const RunConfig& cfg, const DualSolution& sol,
                      const Decomposition& dec,
                      const std::map<std::string, double>& timings,
                      const std::string& path) {
  write_json_atomic(path, result_json(cfg, sol, dec, timings));
}

LogLevel log_level_from(const char* text) {
  if (text == nullptr) return LogLevel::kWarn;
  const std::string t(text);
  if (t == "off" || t == "none") return LogLevel::kOff;
  if (t == "error") return LogLevel::kError;
  if (t == "warn" || t == "warning") return LogLevel::kWarn;
  if (t == "info") return LogLevel::kInfo;
  if (t == "debug") return LogLevel::kDebug;
  return LogLevel::kWarn;
}

LogLevel log_level() {
  static const LogLevel level = log_level_from(std::getenv("RF_LOG"));
  return level;
}

void log_message(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  const char* names[] = {"off", "error", "warn", "info", "debug"};
  std::fprintf(stderr, "rfact[%s]: %s\n", names[static_cast<int>(level)],
               msg.c_str());
}

}  // namespace rfact
