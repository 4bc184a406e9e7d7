#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gradkf/filters.hpp"
#include "gradkf/model.hpp"
#include "gradkf/network.hpp"

namespace gradkf {

// ---------------------------------------------------------------------------
// Scenario description (JSON, "version": 1)

enum class FilterKind { standard, gradient, accelerated, accelerated_adaptive };

struct FilterSpec {
  FilterKind kind = FilterKind::accelerated_adaptive;
  std::string label;  // CSV series name
  GradientOptions options;
  /// Divide fixed_mu and initial_mu by the mean measurement variance, so one
  /// setting serves a whole noise sweep (the gradient scales with R).
  bool mu_per_noise = false;

  GradientOptions scaled_options(double mean_variance) const;
};

struct InputSpec {
  enum class Type { zero, constant, sine } type = Type::zero;
  double amplitude = 0.0;
  double frequency = 0.0;  // Hz, for sine
  Vector value;            // for constant

  /// u(t) for a plant with m inputs.
  Vector at(double t, Index m) const;
};

struct MatrixPlant {
  Matrix A, B, C, Q, Upsilon;
  Vector x0;
  InputSpec input;
};

struct DiffusionPlant {
  DiffusionSpec spec;
  std::vector<GaussianBump> bumps;
};

struct NetworkSpec {
  enum class Layout { patch_grid, geometric, file } layout = Layout::patch_grid;
  int patch_side = 4;
  bool wrap = true;
  double sensor_variance = 1.0;
  std::optional<double> epsilon;  // defaults to dt
  bool epsilon_fastest_mixing = false;
  int nodes = 0;                  // geometric
  std::optional<double> radius;   // geometric; tuned from target_edges when absent
  std::size_t target_edges = 0;
  std::uint64_t graph_seed = 1;
  std::string file;
};

struct ScenarioConfig {
  int version = 1;
  std::string name;
  std::variant<MatrixPlant, DiffusionPlant> plant;
  std::vector<FilterSpec> filters;
  std::optional<NetworkSpec> network;
  double duration = 10.0;
  double dt = 0.01;
  double noise_scale = 1.0;          // R = noise_scale * I
  std::vector<double> sweep;         // noise scales; defaults to {noise_scale}
  std::vector<std::uint64_t> seeds;
  double window_start = 0.0;
  double window_end = 0.0;
  Vector x_hat0;                     // empty means zeros
  Vector P0;                         // diagonal; one entry broadcasts
  double snapshot_time = 0.0;
  int snapshot_node = 0;
  std::string output_dir = "out";

  int steps() const;                 // samples at t = 0, dt, ..., duration minus one
};

/// Parses a scenario document. `full_scale` merges the document's
/// "full_scale" object over the root before parsing. Errors carry the line of
/// the offending key when it can be located in `text`.
ScenarioConfig parse_scenario(const std::string& text, bool full_scale = false);
ScenarioConfig load_scenario(const std::string& path, bool full_scale = false);

// ---------------------------------------------------------------------------
// Running

struct RunOptions {
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed_override;
  int threads = 1;
  bool write_files = true;
};

/// Per-step positive-definiteness checks made during a run.
struct InvariantLog {
  std::size_t phat_checks = 0;
  std::size_t phat_violations = 0;
  std::size_t kf_checks = 0;
  std::size_t kf_violations = 0;
  double max_kf_asymmetry = 0.0;
};

/// Explicit-matrix scenario: error[s][a][i] is the steady-state error of
/// series s at sweep point a for seed i. Series are "data" (when C is
/// invertible) followed by the configured filters.
struct SweepResult {
  std::vector<std::string> series;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<std::vector<double>>> error;
  InvariantLog invariants;

  double median(std::size_t series_index, std::size_t alpha_index) const;
  std::size_t series_index(const std::string& label) const;
};

/// Diffusion/network scenario; vectors are indexed by seed.
struct NetworkRunResult {
  std::vector<std::uint64_t> seeds;
  int snapshot_step = 0;
  int snapshot_node = 0;
  std::vector<double> node_mse;         // single-node filtered field vs truth
  std::vector<double> aggregate_mse;    // averaged raw measurements vs truth
  std::vector<std::vector<double>> disagreement;  // per step
  std::size_t node_count = 0;
  std::size_t edge_count = 0;
  InvariantLog invariants;
};

struct ScenarioResult {
  std::variant<SweepResult, NetworkRunResult> result;
  std::vector<std::string> files;
};

/// Simulates and filters every (seed, sweep point); writes traces and a
/// summary under the output directory unless write_files is false.
ScenarioResult run_scenario(const ScenarioConfig& cfg, const RunOptions& opts = {});

SensorNetwork build_network(const ScenarioConfig& cfg, const NetworkSpec& spec, int grid_n);

double median_of(std::vector<double> values);

}  // namespace gradkf
