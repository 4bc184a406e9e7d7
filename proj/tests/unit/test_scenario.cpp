#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "gradkf/csv.hpp"
#include "gradkf/errors.hpp"
#include "gradkf/rng.hpp"
#include "gradkf/scenario.hpp"

using namespace gradkf;

namespace {

const char* kSmall = R"({
  "version": 1,
  "name": "small",
  "plant": {
    "type": "matrices",
    "A": [[0.95, 0.05], [0.0, 0.9]],
    "B": [[0.0], [0.1]],
    "C": [[1, 0], [0, 1]],
    "Q": [[0.01, 0], [0, 0.01]],
    "Upsilon": [[1, 0], [0, 1]],
    "x0": [1.0, -1.0],
    "input": {"type": "sine", "amplitude": 1.0, "frequency": 0.5}
  },
  "filters": [
    {"kind": "accelerated", "label": "accelerated", "fixed_mu": 0.3, "mu_scaling": "noise"},
    "standard"
  ],
  "horizon": {"duration": 2.0, "dt": 0.01},
  "noise": {"R_scale": 0.1, "sweep": [0.05, 0.1]},
  "metrics": {"window": [1.0, 2.0]},
  "seeds": [3, 4],
  "output": {"directory": "unused"}
})";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  REQUIRE(at != std::string::npos);
  return s.replace(at, from.size(), to);
}

std::string config_error(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("doubles print in shortest round-trip form") {
  NormalSource rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double v = rng() * std::pow(10.0, static_cast<int>(rng.uniform() * 40) - 20);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(2.0) == "2");
}

TEST_CASE("trace tables parse back exactly") {
  TraceTable t;
  t.add(0, 0.0, "truth", 0, 1.0 / 3.0);
  t.add(1, 0.01, "kalman", 1, -2.5e-17);
  std::istringstream in(t.str());
  const auto rows = parse_trace_csv(in);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].value == 1.0 / 3.0);
  CHECK(rows[1].series == "kalman");
  CHECK(rows[1].time == 0.01);
  CHECK(rows[1].value == -2.5e-17);

  std::istringstream bad_header("a,b\n");
  CHECK_THROWS_AS(parse_trace_csv(bad_header), ConfigError);
  std::istringstream bad_row(std::string(TraceTable::kHeader) + "\n0,0,x,0\n");
  CHECK_THROWS_AS(parse_trace_csv(bad_row), ConfigError);
}

TEST_CASE("atomic writes create parent directories") {
  const auto dir = std::filesystem::temp_directory_path() / "gradkf_unit_atomic" / "nested";
  std::filesystem::remove_all(dir.parent_path());
  write_file_atomic((dir / "a.txt").string(), "hello\n");
  std::ifstream in(dir / "a.txt");
  std::string line;
  std::getline(in, line);
  CHECK(line == "hello");
  for (const auto& e : std::filesystem::directory_iterator(dir)) CHECK(e.path().filename() == "a.txt");
  std::filesystem::remove_all(dir.parent_path());
}

TEST_CASE("config parsing") {
  const auto cfg = parse_scenario(kSmall);
  CHECK(cfg.name == "small");
  CHECK(cfg.steps() == 201);
  CHECK(cfg.sweep == std::vector<double>{0.05, 0.1});
  REQUIRE(cfg.filters.size() == 2);
  CHECK(cfg.filters[0].kind == FilterKind::accelerated);
  CHECK(cfg.filters[0].mu_per_noise);
  CHECK(cfg.filters[0].scaled_options(0.1).fixed_mu == doctest::Approx(3.0));
  CHECK(cfg.filters[1].label == "kalman");
  CHECK(cfg.P0.size() == 2);
}

TEST_CASE("config errors point at the offending line") {
  const std::string unknown = replace(kSmall, "\"seeds\": [3, 4],", "\"seeds\": [3, 4],\n  \"colour\": 1,");
  const std::string msg = config_error(unknown);
  CHECK(msg.find("config:22:") == 0);
  CHECK(msg.find("unknown key") != std::string::npos);

  CHECK(config_error(replace(kSmall, "\"seeds\": [3, 4]", "\"seeds\": []")).find("seeds") != std::string::npos);
  CHECK(config_error(replace(kSmall, "\"version\": 1", "\"version\": 2")).find("version") != std::string::npos);
  CHECK(config_error(replace(kSmall, "[0.05, 0.1]", "[]")).find("sweep") != std::string::npos);
  CHECK(config_error(replace(kSmall, "[1.0, 2.0]", "[1.0, 3.0]")).find("window") != std::string::npos);
  CHECK(config_error(replace(kSmall, "\"standard\"", "\"magic\"")).find("unknown filter") != std::string::npos);
  CHECK(config_error(replace(kSmall, "[0, 1]]", "[0, 1], [1, 1]]")).find("C") != std::string::npos);
  CHECK(config_error("{ not json").find("config") == 0);
}

TEST_CASE("full-scale overrides merge over the base document") {
  const std::string text = replace(kSmall, "\"output\": {\"directory\": \"unused\"}",
                                   "\"output\": {\"directory\": \"unused\"},\n"
                                   "  \"full_scale\": {\"horizon\": {\"duration\": 4.0}, \"seeds\": [9]}");
  const auto base = parse_scenario(text);
  const auto big = parse_scenario(text, true);
  CHECK(base.steps() == 201);
  CHECK(big.steps() == 401);
  CHECK(big.dt == 0.01);
  CHECK(big.seeds == std::vector<std::uint64_t>{9});
}

TEST_CASE("runs are deterministic and honour seed overrides") {
  const auto cfg = parse_scenario(kSmall);
  RunOptions opts;
  opts.write_files = false;
  const auto a = std::get<SweepResult>(run_scenario(cfg, opts).result);
  const auto b = std::get<SweepResult>(run_scenario(cfg, opts).result);
  CHECK(a.series == std::vector<std::string>{"data", "accelerated", "kalman"});
  CHECK(a.error == b.error);
  CHECK(a.invariants.phat_violations == 0);
  CHECK(a.invariants.kf_violations == 0);
  CHECK(a.invariants.kf_checks > 0);

  opts.threads = 3;
  const auto threaded = std::get<SweepResult>(run_scenario(cfg, opts).result);
  CHECK(threaded.error == a.error);

  opts.seed_override = 77;
  const auto c = std::get<SweepResult>(run_scenario(cfg, opts).result);
  CHECK(c.seeds == std::vector<std::uint64_t>{77});
  CHECK(c.error[0][0][0] != a.error[0][0][0]);
}

TEST_CASE("scenario files land in the output directory") {
  const auto dir = std::filesystem::temp_directory_path() / "gradkf_unit_run";
  std::filesystem::remove_all(dir);
  const auto cfg = parse_scenario(kSmall);
  RunOptions opts;
  opts.output_dir = dir.string();
  const auto res = run_scenario(cfg, opts);
  CHECK(std::filesystem::exists(dir / "summary.json"));
  CHECK(std::filesystem::exists(dir / "sweep.csv"));
  CHECK(std::filesystem::exists(dir / "trace_seed3_alpha0.csv"));
  CHECK(res.files.size() == 2 * 2 + 3);

  std::ifstream in(dir / "trace_seed3_alpha1.csv");
  const auto rows = parse_trace_csv(in);
  std::set<std::string> series;
  for (const auto& r : rows) series.insert(r.series);
  CHECK(series.count("truth") == 1);
  CHECK(series.count("error_kalman") == 1);
  std::filesystem::remove_all(dir);
}
