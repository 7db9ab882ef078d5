#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rfact/cli_io.hpp"
#include "rfact/errors.hpp"
#include "rfact/estimation.hpp"
#include "rfact/recovery.hpp"
#include "rfact/rng.hpp"
#include "test_helpers.hpp"

using namespace rfact;
using nlohmann::json;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / "rfact_cli_io_test";
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

void put(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << body;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream body;
  body << in.rdbuf();
  return body.str();
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

bool type_matches(const json& value, const std::string& t) {
  if (t == "object") return value.is_object();
  if (t == "array") return value.is_array();
  if (t == "string") return value.is_string();
  if (t == "boolean") return value.is_boolean();
  if (t == "null") return value.is_null();
  if (t == "integer") return value.is_number_integer();
  if (t == "number") return value.is_number();
  return false;
}

/// Checks the subset of JSON Schema the bundled schema uses: type (single or
/// alternatives), const, required, properties, additionalProperties, items.
void schema_errors(const json& schema, const json& value,
                   const std::string& where, std::vector<std::string>& errs) {
  if (schema.contains("const") && value != schema["const"])
    errs.push_back(where + ": != const " + schema["const"].dump());
  if (schema.contains("type")) {
    const json& t = schema["type"];
    bool ok = false;
    if (t.is_string()) ok = type_matches(value, t.get<std::string>());
    if (t.is_array())
      for (const auto& alt : t)
        ok = ok || type_matches(value, alt.get<std::string>());
    if (!ok) errs.push_back(where + ": wrong type, have " + value.dump());
  }
  if (schema.contains("required"))
    for (const auto& key : schema["required"])
      if (!value.is_object() || !value.contains(key.get<std::string>()))
        errs.push_back(where + ": missing required " + key.get<std::string>());
  if (value.is_object()) {
    const json props =
        schema.contains("properties") ? schema["properties"] : json::object();
    for (const auto& [key, sub] : value.items()) {
      if (props.contains(key)) {
        schema_errors(props[key], sub, where + "." + key, errs);
      } else if (schema.contains("additionalProperties")) {
        const json& extra = schema["additionalProperties"];
        if (extra.is_boolean() && !extra.get<bool>())
          errs.push_back(where + ": unexpected key " + key);
        if (extra.is_object())
          schema_errors(extra, sub, where + "." + key, errs);
      }
    }
  }
  if (value.is_array() && schema.contains("items")) {
    int i = 0;
    for (const auto& item : value)
      schema_errors(schema["items"], item, where + "[" + std::to_string(i++) + "]", errs);
  }
}

std::vector<std::string> validate(const json& schema, const json& value) {
  std::vector<std::string> errs;
  schema_errors(schema, value, "$", errs);
  return errs;
}

json bundled_schema() {
  return json::parse(slurp(std::string(RFACT_SCHEMA_DIR) + "/result.schema.json"));
}

}  // namespace

TEST_CASE("parse_args accepts the documented command forms") {
  TempDir dir;
  put(dir.file("d.csv"), "1,0\n0,1\n");
  put(dir.file("s.csv"), "2,1\n1,2\n");

  RunConfig robust = parse_args(
      {"robust", "--input", dir.file("d.csv"), "--delta-fraction", "0.5"});
  CHECK(robust.command == Command::kRobust);
  CHECK(robust.input == dir.file("d.csv"));
  CHECK(robust.sigma_hat.empty());
  CHECK(robust.has_fraction);
  CHECK(!robust.has_delta);
  CHECK(robust.delta_fraction == 0.5);
  CHECK(robust.tol == DualSolverOptions{}.tol);

  RunConfig dmax = parse_args({"delta-max", "--sigma-hat", dir.file("s.csv")});
  CHECK(dmax.command == Command::kDeltaMax);
  CHECK(dmax.sigma_hat == dir.file("s.csv"));
  CHECK(dmax.num_samples == 1);

  RunConfig mtfa = parse_args(
      {"mtfa", "--sigma-hat", dir.file("s.csv"), "--N", "200", "--output",
       dir.file("outdir")});
  CHECK(mtfa.command == Command::kMtfa);
  CHECK(mtfa.num_samples == 200);
  CHECK(mtfa.output_dir == dir.file("outdir"));

  RunConfig sim = parse_args({"simulate", "--n", "10", "--r", "2", "--N",
                              "100", "--seeds", "0..3,7", "--out",
                              dir.file("rep.json"), "--jobs", "4", "--sweep"});
  CHECK(sim.command == Command::kSimulate);
  CHECK(sim.n == 10);
  CHECK(sim.r == 2);
  CHECK(sim.num_samples == 100);
  CHECK(sim.seeds == std::vector<std::uint64_t>{0, 1, 2, 3, 7});
  CHECK(sim.delta_fraction == 0.5);
  CHECK(sim.jobs == 4);
  CHECK(sim.sweep);
}

TEST_CASE("parse_args rejects conflicting or missing options") {
  TempDir dir;
  put(dir.file("d.csv"), "1\n");

  // mutually exclusive tolerance flags
  CHECK_THROWS_AS(parse_args({"robust", "--input", dir.file("d.csv"),
                              "--delta", "0.1", "--delta-fraction", "0.5"}),
                  UsageError);
  CHECK_THROWS_AS(parse_args({"robust", "--input", dir.file("d.csv")}),
                  UsageError);
  CHECK_THROWS_AS(parse_args({"robust", "--input", dir.file("d.csv"),
                              "--delta-fraction", "1.5"}),
                  UsageError);
  CHECK_THROWS_AS(parse_args({"robust", "--input", dir.file("d.csv"),
                              "--delta", "-0.5"}),
                  UsageError);

  // input source: exactly one
  CHECK_THROWS_AS(parse_args({"mtfa"}), UsageError);
  CHECK_THROWS_AS(parse_args({"mtfa", "--input", dir.file("d.csv"),
                              "--sigma-hat", dir.file("d.csv")}),
                  UsageError);
  CHECK_THROWS_AS(
      parse_args({"mtfa", "--input", dir.file("missing.csv")}), UsageError);

  CHECK_THROWS_AS(parse_args({}), UsageError);
  CHECK_THROWS_AS(parse_args({"frobnicate"}), UsageError);
  CHECK_THROWS_AS(parse_args({"mtfa", "--input", dir.file("d.csv"),
                              "--unknown-flag"}),
                  UsageError);
  CHECK_THROWS_AS(parse_args({"simulate", "--n", "10", "--r", "2"}),
                  UsageError);
  CHECK_THROWS_AS(parse_args({"simulate", "--n", "10", "--r", "12", "--out",
                              dir.file("r.json")}),
                  UsageError);
  CHECK_THROWS_AS(parse_args({"report", "--in", dir.file("missing.json"),
                              "--output", dir.file("out")}),
                  UsageError);
}

TEST_CASE("help and defaults short-circuit parsing") {
  RunConfig help = parse_args({"--help"});
  CHECK(help.show_help);
  CHECK(help.help_text.find("--delta-fraction") != std::string::npos);
  CHECK(help.help_text.find("--sigma-hat") != std::string::npos);
  CHECK(help.help_text.find("simulate") != std::string::npos);

  RunConfig defaults = parse_args({"--print-defaults"});
  CHECK(defaults.show_defaults);

  const std::string table = format_defaults();
  CHECK(table.find("delta_fraction") != std::string::npos);
  CHECK(table.find("0.5") != std::string::npos);
  CHECK(table.find("dual.tol") != std::string::npos);
  CHECK(table.find("1e-08") != std::string::npos);
  size_t lines = 0;
  for (char c : table) lines += c == '\n';
  CHECK(lines == default_table().size());
}

TEST_CASE("seed lists cover singletons, ranges, and mixtures") {
  CHECK(parse_seed_list("3") == std::vector<std::uint64_t>{3});
  CHECK(parse_seed_list("0..4") == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  CHECK(parse_seed_list("2..2") == std::vector<std::uint64_t>{2});
  CHECK(parse_seed_list("1,9..11,4") ==
        std::vector<std::uint64_t>{1, 9, 10, 11, 4});
  CHECK_THROWS_AS(parse_seed_list("5..2"), UsageError);
  CHECK_THROWS_AS(parse_seed_list("a..b"), UsageError);
  CHECK_THROWS_AS(parse_seed_list(""), UsageError);
  CHECK_THROWS_AS(parse_seed_list("1,,2"), UsageError);
}

TEST_CASE("error classes map onto the documented exit codes") {
  CHECK(exit_code_for(UsageError("u")) == 2);
  CHECK(exit_code_for(ParseError("p")) == 3);
  CHECK(exit_code_for(AsymmetryError("a")) == 3);
  CHECK(exit_code_for(IoError("i")) == 3);
  CHECK(exit_code_for(NumericalBreakdown("n")) == 1);
  CHECK(exit_code_for(DeltaTooLarge("d")) == 1);
  CHECK(exit_code_for(std::runtime_error("r")) == 1);
}

TEST_CASE("matrix csv round trip is bit exact") {
  TempDir dir;
  Matrix m(3, 4);
  CounterRng rng(11, 1);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = rng.next_gaussian();
  m(0, 0) = 1.0 / 3.0;
  m(0, 1) = 1e-300;
  m(0, 2) = -6.02214076e23;
  m(1, 0) = 0.1 + 0.2;
  m(2, 3) = 0.0;

  const std::string path = dir.file("m.csv");
  write_matrix_csv(path, m);
  Matrix back = read_matrix_csv(path);
  REQUIRE(back.rows() == 3);
  REQUIRE(back.cols() == 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(back(i, j) == m(i, j));

  // identity survives exactly
  write_matrix_csv(path, Matrix::identity(3));
  Matrix eye = read_matrix_csv(path);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(eye(i, j) == (i == j ? 1.0 : 0.0));

  // no temp file stays behind
  CHECK(!std::filesystem::exists(path + ".tmp"));
}

TEST_CASE("csv parse errors name the offending cell") {
  TempDir dir;
  const std::string path = dir.file("bad.csv");

  put(path, "1,2\n3,nan\n");
  std::string msg = message_of([&] { read_matrix_csv(path); });
  CHECK(msg.find("line 2") != std::string::npos);
  CHECK(msg.find("field 2") != std::string::npos);
  CHECK(msg.find("non-finite") != std::string::npos);

  put(path, "1,2\n3,abc\n");
  msg = message_of([&] { read_matrix_csv(path); });
  CHECK(msg.find("line 2") != std::string::npos);
  CHECK(msg.find("abc") != std::string::npos);

  put(path, "1,2\n3\n");
  msg = message_of([&] { read_matrix_csv(path); });
  CHECK(msg.find("line 2") != std::string::npos);
  CHECK(msg.find("expected 2") != std::string::npos);

  put(path, "1,2\n3,\n");
  CHECK_THROWS_AS(read_matrix_csv(path), ParseError);
  put(path, "");
  CHECK_THROWS_AS(read_matrix_csv(path), ParseError);
  CHECK_THROWS_AS(read_matrix_csv(dir.file("missing.csv")), ParseError);

  // blank lines and CRLF endings are tolerated, physical lines are counted
  put(path, "\r\n1,2\r\n\r\n3,oops\r\n");
  msg = message_of([&] { read_matrix_csv(path); });
  CHECK(msg.find("line 4") != std::string::npos);
}

TEST_CASE("symmetric reads forgive rounding asymmetry and reject real ones") {
  TempDir dir;
  const std::string path = dir.file("s.csv");

  put(path, "2,1.0000000000001\n1,2\n");
  SymMat s = read_symmetric_csv(path);
  CHECK(s(0, 1) == doctest::Approx(1.00000000000005).epsilon(1e-15));

  put(path, "2,1.001\n1,2\n");
  std::string msg = message_of([&] { read_symmetric_csv(path); });
  CHECK(msg.find("asymmetry") != std::string::npos);
  CHECK(msg.find("(1,2)") != std::string::npos);
  CHECK_THROWS_AS(read_symmetric_csv(path), AsymmetryError);

  put(path, "1,2,3\n4,5,6\n");
  CHECK_THROWS_AS(read_symmetric_csv(path), AsymmetryError);

  SymMat sym(2);
  sym(0, 0) = 2.0;
  sym(0, 1) = 1.0;
  sym(1, 1) = 3.0;
  write_symmetric_csv(path, sym);
  SymMat back = read_symmetric_csv(path);
  CHECK(back(0, 0) == 2.0);
  CHECK(back(0, 1) == 1.0);
  CHECK(back(1, 1) == 3.0);
}

TEST_CASE("result document validates against the bundled schema") {
  TempDir dir;
  SymMat sigma(2);
  sigma(0, 0) = 2.0;
  sigma(0, 1) = 1.0;
  sigma(1, 1) = 2.0;
  CovarianceEstimate est(sigma, 100);
  const Tolerance tol = make_tolerance(est, 0.5);
  DualSolution sol = solve_dual(est, tol.delta);
  REQUIRE(sol.converged);
  Decomposition dec = recover(sol, est, tol.delta);

  RunConfig cfg;
  cfg.command = Command::kRobust;
  cfg.sigma_hat = "sigma.csv";
  cfg.has_fraction = true;
  cfg.delta_fraction = 0.5;
  cfg.tol = DualSolverOptions{}.tol;

  const json doc = result_json(cfg, sol, dec, {{"solve", 0.01}, {"total", 0.02}});
  const auto errs = validate(bundled_schema(), doc);
  for (const auto& e : errs) MESSAGE(e);
  CHECK(errs.empty());

  CHECK(doc["config_echo"]["delta"].is_null());
  CHECK(doc["config_echo"]["delta_fraction"] == 0.5);
  CHECK(doc["lambda_star"] == sol.point.lambda);
  CHECK(doc["objective"] == dec.R.trace());
  CHECK(doc["spectra"]["R"].size() == 2);
  CHECK(doc["spectra"]["Lambda"].size() == 2);

  // schema violations are actually caught
  json broken = doc;
  broken.erase("kkt");
  broken["surprise"] = 1;
  CHECK(validate(bundled_schema(), broken).size() == 2);
}

TEST_CASE("a trivial decomposition still reports every field") {
  Decomposition dec;
  dec.R = SymMat(2);
  dec.Sigma = SymMat(2);
  dec.D = SymMat(2);
  dec.rank_R = 0;
  DualSolution sol;
  sol.point.lambda = 1.0;

  RunConfig cfg;
  cfg.command = Command::kRobust;
  cfg.has_delta = true;
  cfg.delta = 0.1;
  cfg.tol = 1e-8;

  const json doc = result_json(cfg, sol, dec, {});
  CHECK(validate(bundled_schema(), doc).empty());
  CHECK(doc["rank_R"] == 0);
  CHECK(doc["config_echo"]["delta"] == 0.1);
  CHECK(doc["config_echo"]["delta_fraction"].is_null());
  CHECK(doc["timings"].is_object());
}

TEST_CASE("json writes are atomic and deterministic") {
  TempDir dir;
  const std::string path = dir.file("r.json");
  put(path, "garbage that must disappear");

  json doc = {{"b", 1}, {"a", {{"nested", true}}}, {"list", {1.5, 2.5}}};
  write_json_atomic(path, doc);
  CHECK(json::parse(slurp(path)) == doc);
  CHECK(!std::filesystem::exists(path + ".tmp"));

  const std::string first = slurp(path);
  write_json_atomic(path, doc);
  CHECK(slurp(path) == first);

  CHECK_THROWS_AS(
      write_json_atomic(dir.file("no_such_dir/r.json"), doc), IoError);
}

TEST_CASE("log levels parse with a warn fallback") {
  CHECK(log_level_from(nullptr) == LogLevel::kWarn);
  CHECK(log_level_from("") == LogLevel::kWarn);
  CHECK(log_level_from("off") == LogLevel::kOff);
  CHECK(log_level_from("error") == LogLevel::kError);
  CHECK(log_level_from("warn") == LogLevel::kWarn);
  CHECK(log_level_from("info") == LogLevel::kInfo);
  CHECK(log_level_from("debug") == LogLevel::kDebug);
  CHECK(log_level_from("verbose") == LogLevel::kWarn);
}
