#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "rfact/matrix.hpp"
#include "rfact/recovery.hpp"
#include "rfact/simulator.hpp"
#include "rfact/symmat.hpp"

namespace rfact {

enum class Command { kDeltaMax, kMtfa, kRobust, kSimulate, kReport };

/// Flag name of a command, as typed on the command line.
const char* command_name(Command c);

/// Validated command-line configuration for one rfact invocation.
struct RunConfig {
  Command command = Command::kDeltaMax;
  bool show_help = false;      // print help_text and exit 0
  bool show_defaults = false;  // print format_defaults() and exit 0
  std::string help_text;

  // delta-max / mtfa / robust input: exactly one of the two paths is set
  std::string input;      // n-by-N data record, columns are samples
  std::string sigma_hat;  // symmetric covariance file
  int num_samples = 1;    // sample count tag when reading a covariance

  // robust tolerance: exactly one of delta / delta_fraction is set
  bool has_delta = false;
  double delta = 0.0;
  bool has_fraction = false;
  double delta_fraction = 0.0;

  double tol = 0.0;  // dual solver stationarity tolerance
  bool trace = false;
  std::string output_dir;  // artifact directory; empty means print only
  std::string out_file;    // simulate/report JSON target

  // simulate
  int n = 0;
  int r = 0;
  std::uint64_t model_seed = 0;
  std::vector<std::uint64_t> seeds;
  double loading_scale = 0.0;
  double noise_lo = 0.0;
  double noise_hi = 0.0;
  int jobs = 1;
  bool sweep = false;

  // report
  std::string report_in;  // simulate JSON to convert
};

/// Parses the argument list (without the program name) into a validated
/// configuration. Unknown flags, missing files, and conflicting options
/// raise UsageError.
RunConfig parse_args(const std::vector<std::string>& args);

/// "0..19", "3", or a comma list mixing both forms.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

/// Process exit code for an error escaping a command: 2 for usage, 3 for
/// input files that cannot be read or parsed, 1 for everything else.
int exit_code_for(const std::exception& e);

struct DefaultEntry {
  std::string name;
  std::string value;
  std::string what;
};

/// Every tunable default in one table, shared by the flag definitions.
std::vector<DefaultEntry> default_table();

/// The table rendered one aligned "name  value  description" line per row.
std::string format_defaults();

/// Rectangular CSV of finite reals. Cell errors name the file, line, and
/// field; rows must all have the same width.
Matrix read_matrix_csv(const std::string& path);

/// Interprets a square matrix as symmetric: asymmetry up to
/// rel_tol * max|entry| is averaged away, anything larger is an error.
SymMat as_symmetric(const Matrix& m, double rel_tol = 1e-9);

SymMat read_symmetric_csv(const std::string& path, double rel_tol = 1e-9);

/// 17 significant digits, so a write/read round trip is bit exact. Writes
/// a temp file and renames it into place.
void write_matrix_csv(const std::string& path, const Matrix& m);
void write_symmetric_csv(const std::string& path, const SymMat& m);

/// The config subset echoed into every result file, fixed keys.
nlohmann::json config_echo_json(const RunConfig& cfg);

/// Stable-schema result document for a robust decomposition run; the layout
/// is described by schemas/result.schema.json and versioned by "version".
nlohmann::json result_json(const RunConfig& cfg, const DualSolution& sol,
                           const Decomposition& dec,
                           const std::map<std::string, double>& timings);

/// Serializes with sorted keys and renames a temp file into place, so an
/// interrupted run never leaves a partial document.
void write_json_atomic(const std::string& path, const nlohmann::json& doc);

void emit_result_json(const RunConfig& cfg, const DualSolution& sol,
                      const Decomposition& dec,
                      const std::map<std::string, double>& timings,
                      const std::string& path);

enum class LogLevel { kOff = 0, kError = 1, kWarn = 2, kInfo = 3, kDebug = 4 };

/// Maps an RF_LOG value to a level; empty or unrecognized text means kWarn.
LogLevel log_level_from(const char* text);

/// Level parsed from the RF_LOG environment variable, cached.
LogLevel log_level();

/// Writes "rfact[level]: msg" to stderr when the level is enabled.
void log_message(LogLevel level, const std::string& msg);

}  // namespace rfact
