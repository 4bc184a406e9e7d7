#include "gradkf/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "gradkf/analysis.hpp"
#include "gradkf/csv.hpp"
#include "gradkf/errors.hpp"
#include "gradkf/rng.hpp"

namespace gradkf {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Parsing


GradientOptions FilterSpec::scaled_options(double mean_variance) const {
  GradientOptions o = options;
  if (mu_per_noise) {
    if (!(mean_variance > 0.0)) throw ConfigError("mu_scaling: measurement variance must be > 0");
    o.fixed_mu /= mean_variance;
    o.initial_mu /= mean_variance;
  }
  return o;
}

namespace {

/// Line of the key sequence `path` in the raw text (each key searched after
/// the previous one), or 0 when it cannot be found.
int locate(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  for (const auto& key : path) {
    const auto hit = text.find("\"" + key + "\"", pos);
    if (hit == std::string::npos) return 0;
    pos = hit;
  }
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Parser {
 public:
  explicit Parser(const std::string& text) : text_(text) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& what) const {
    std::string where;
    for (const auto& p : path) where += (where.empty() ? "" : ".") + p;
    const int line = locate(text_, path);
    throw ConfigError("config" + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " +
                      (where.empty() ? "" : where + ": ") + what);
  }

  const json& need(const json& obj, const std::vector<std::string>& path) const {
    const auto& key = path.back();
    if (!obj.is_object() || !obj.contains(key)) fail(path, "missing required key");
    return obj.at(key);
  }

  double number(const json& v, const std::vector<std::string>& path) const {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }

  int integer(const json& v, const std::vector<std::string>& path) const {
    if (!v.is_number_integer()) fail(path, "expected an integer");
    return v.get<int>();
  }

  bool boolean(const json& v, const std::vector<std::string>& path) const {
    if (!v.is_boolean()) fail(path, "expected true or false");
    return v.get<bool>();
  }

  std::string string(const json& v, const std::vector<std::string>& path) const {
    if (!v.is_string()) fail(path, "expected a string");
    return v.get<std::string>();
  }

  Vector vector(const json& v, const std::vector<std::string>& path) const {
    if (!v.is_array()) fail(path, "expected an array of numbers");
    Vector out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Index>(i)] = number(v[i], path);
    return out;
  }

  /// Row-major nested arrays; a bare number is a 1x1 matrix.
  Matrix matrix(const json& v, const std::vector<std::string>& path) const {
    if (v.is_number()) return Matrix::Constant(1, 1, v.get<double>());
    if (!v.is_array() || v.empty() || !v[0].is_array()) fail(path, "expected a matrix (array of rows)");
    const auto rows = static_cast<Index>(v.size());
    const auto cols = static_cast<Index>(v[0].size());
    Matrix out(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const auto& row = v[static_cast<std::size_t>(r)];
      if (!row.is_array() || static_cast<Index>(row.size()) != cols) fail(path, "rows differ in length");
      for (Index c = 0; c < cols; ++c) out(r, c) = number(row[static_cast<std::size_t>(c)], path);
    }
    return out;
  }

  template <class T>
  T get_or(const json& obj, const std::vector<std::string>& path, T fallback) const {
    const auto& key = path.back();
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if constexpr (std::is_same_v<T, double>) return number(v, path);
    else if constexpr (std::is_same_v<T, int>) return integer(v, path);
    else if constexpr (std::is_same_v<T, bool>) return boolean(v, path);
    else return string(v, path);
  }

  void only_keys(const json& obj, const std::vector<std::string>& path, std::initializer_list<const char*> keys) const {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; })) {
        auto p = path;
        p.push_back(it.key());
        fail(p, "unknown key");
      }
    }
  }

 private:
  const std::string& text_;
};

FilterSpec parse_filter(const Parser& ps, const json& v, const std::vector<std::string>& path) {
  FilterSpec f;
  std::string kind;
  json obj = v.is_string() ? json{{"kind", v}} : v;
  if (!obj.is_object()) ps.fail(path, "expected a filter name or object");
  ps.only_keys(obj, path, {"kind", "label", "schedule", "step_base", "fixed_mu", "initial_mu", "mu_scaling"});
  auto p = path;
  p.push_back("kind");
  kind = ps.string(ps.need(obj, p), p);
  if (kind == "standard") {
    f.kind = FilterKind::standard;
    f.label = "kalman";
  } else if (kind == "gradient") {
    f.kind = FilterKind::gradient;
    f.options.accelerated = false;
    f.options.adaptive = false;
    f.label = "gradient";
  } else if (kind == "accelerated") {
    f.kind = FilterKind::accelerated;
    f.options.accelerated = true;
    f.options.adaptive = false;
    f.label = "accelerated";
  } else if (kind == "accelerated+adaptive") {
    f.kind = FilterKind::accelerated_adaptive;
    f.options.accelerated = true;
    f.options.adaptive = true;
    f.label = "accelerated_adaptive";
  } else {
    ps.fail(p, "unknown filter `" + kind + "` (standard, gradient, accelerated, accelerated+adaptive)");
  }
  f.label = ps.get_or<std::string>(obj, {path.front(), "label"}, f.label);
  const std::string schedule = ps.get_or<std::string>(obj, {path.front(), "schedule"}, "standard");
  if (schedule == "standard") f.options.schedule = MomentumSchedule::standard;
  else if (schedule == "shifted") f.options.schedule = MomentumSchedule::shifted;
  else ps.fail({path.front(), "schedule"}, "expected `standard` or `shifted`");
  const std::string base = ps.get_or<std::string>(obj, {path.front(), "step_base"}, "current");
  if (base == "current") f.options.base = StepBase::current;
  else if (base == "lookahead") f.options.base = StepBase::lookahead;
  else ps.fail({path.front(), "step_base"}, "expected `current` or `lookahead`");
  f.options.fixed_mu = ps.get_or<double>(obj, {path.front(), "fixed_mu"}, kInitialMu);
  f.options.initial_mu = ps.get_or<double>(obj, {path.front(), "initial_mu"}, kInitialMu);
  const std::string scaling = ps.get_or<std::string>(obj, {path.front(), "mu_scaling"}, "none");
  if (scaling == "noise") f.mu_per_noise = true;
  else if (scaling != "none") ps.fail({path.front(), "mu_scaling"}, "expected `none` or `noise`");
  if (!(f.options.fixed_mu > 0.0) || !(f.options.initial_mu > 0.0))
    ps.fail({path.front(), "fixed_mu"}, "learning rates must be > 0");
  return f;
}

InputSpec parse_input(const Parser& ps, const json& v) {
  InputSpec in;
  if (!v.is_object()) ps.fail({"plant", "input"}, "expected an object");
  ps.only_keys(v, {"plant", "input"}, {"type", "amplitude", "frequency", "value"});
  const std::string type = ps.get_or<std::string>(v, {"plant", "input", "type"}, "zero");
  if (type == "zero") {
    in.type = InputSpec::Type::zero;
  } else if (type == "constant") {
    in.type = InputSpec::Type::constant;
    in.value = ps.vector(ps.need(v, {"plant", "input", "value"}), {"plant", "input", "value"});
  } else if (type == "sine") {
    in.type = InputSpec::Type::sine;
    in.amplitude = ps.get_or<double>(v, {"plant", "input", "amplitude"}, 1.0);
    in.frequency = ps.get_or<double>(v, {"plant", "input", "frequency"}, 1.0);
  } else {
    ps.fail({"plant", "input", "type"}, "expected zero, constant or sine");
  }
  return in;
}

NetworkSpec parse_network(const Parser& ps, const json& v) {
  NetworkSpec n;
  if (!v.is_object()) ps.fail({"network"}, "expected an object");
  ps.only_keys(v, {"network"},
               {"layout", "patch_side", "wrap", "sensor_variance", "epsilon", "nodes", "radius", "target_edges",
                "graph_seed", "file"});
  const std::string layout = ps.get_or<std::string>(v, {"network", "layout"}, "patch_grid");
  if (layout == "patch_grid") n.layout = NetworkSpec::Layout::patch_grid;
  else if (layout == "geometric") n.layout = NetworkSpec::Layout::geometric;
  else if (layout == "file") n.layout = NetworkSpec::Layout::file;
  else ps.fail({"network", "layout"}, "expected patch_grid, geometric or file");
  n.patch_side = ps.get_or<int>(v, {"network", "patch_side"}, 4);
  n.wrap = ps.get_or<bool>(v, {"network", "wrap"}, true);
  n.sensor_variance = ps.get_or<double>(v, {"network", "sensor_variance"}, 1.0);
  if (!(n.sensor_variance > 0.0)) ps.fail({"network", "sensor_variance"}, "must be > 0");
  if (v.contains("epsilon") && v.at("epsilon").is_string()) {
    if (v.at("epsilon").get<std::string>() != "fastest_mixing")
      ps.fail({"network", "epsilon"}, "expected a number or `fastest_mixing`");
    n.epsilon_fastest_mixing = true;
  } else if (v.contains("epsilon") && !v.at("epsilon").is_null()) {
    n.epsilon = ps.number(v.at("epsilon"), {"network", "epsilon"});
    if (!(*n.epsilon > 0.0)) ps.fail({"network", "epsilon"}, "must be > 0");
  }
  if (n.layout == NetworkSpec::Layout::geometric) {
    n.nodes = ps.integer(ps.need(v, {"network", "nodes"}), {"network", "nodes"});
    if (n.nodes < 1) ps.fail({"network", "nodes"}, "must be >= 1");
    if (v.contains("radius")) n.radius = ps.number(v.at("radius"), {"network", "radius"});
    else n.target_edges = static_cast<std::size_t>(ps.integer(ps.need(v, {"network", "target_edges"}),
                                                              {"network", "target_edges"}));
    n.graph_seed = static_cast<std::uint64_t>(ps.get_or<int>(v, {"network", "graph_seed"}, 1));
  }
  if (n.layout == NetworkSpec::Layout::file) n.file = ps.string(ps.need(v, {"network", "file"}), {"network", "file"});
  return n;
}

}  // namespace

Vector InputSpec::at(double t, Index m) const {
  switch (type) {
    case Type::constant:
      return value;
    case Type::sine:
      return Vector::Constant(m, amplitude * std::sin(2.0 * 3.14159265358979323846 * frequency * t));
    case Type::zero:
    default:
      return Vector::Zero(m);
  }
}

int ScenarioConfig::steps() const { return static_cast<int>(std::lround(duration / dt)) + 1; }

ScenarioConfig parse_scenario(const std::string& text, bool full_scale) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto byte = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
    throw ConfigError("config:" + std::to_string(line) + ": invalid JSON: " + e.what());
  }
  const Parser ps(text);
  if (!doc.is_object()) ps.fail({}, "top level must be an object");
  if (full_scale) {
    if (!doc.contains("full_scale")) ps.fail({"full_scale"}, "scenario has no full-scale variant");
    const json patch = doc.at("full_scale");
    doc.merge_patch(patch);
  }
  doc.erase("full_scale");
  ps.only_keys(doc, {},
               {"version", "name", "plant", "filters", "network", "horizon", "noise", "initial_estimate", "seeds",
                "metrics", "snapshot", "output"});

  ScenarioConfig cfg;
  cfg.version = ps.integer(ps.need(doc, {"version"}), {"version"});
  if (cfg.version != 1) ps.fail({"version"}, "unsupported version " + std::to_string(cfg.version));
  cfg.name = ps.get_or<std::string>(doc, {"name"}, "scenario");

  // horizon
  const json& horizon = ps.need(doc, {"horizon"});
  cfg.duration = ps.number(ps.need(horizon, {"horizon", "duration"}), {"horizon", "duration"});
  cfg.dt = ps.number(ps.need(horizon, {"horizon", "dt"}), {"horizon", "dt"});
  if (!(cfg.dt > 0.0)) ps.fail({"horizon", "dt"}, "must be > 0");
  if (!(cfg.duration >= cfg.dt)) ps.fail({"horizon", "duration"}, "must be >= dt");

  // plant
  const json& plant = ps.need(doc, {"plant"});
  const std::string type = ps.string(ps.need(plant, {"plant", "type"}), {"plant", "type"});
  Index n = 0;
  if (type == "matrices") {
    ps.only_keys(plant, {"plant"}, {"type", "A", "B", "C", "Q", "Upsilon", "x0", "input"});
    MatrixPlant mp;
    mp.A = ps.matrix(ps.need(plant, {"plant", "A"}), {"plant", "A"});
    n = mp.A.rows();
    mp.B = plant.contains("B") ? ps.matrix(plant.at("B"), {"plant", "B"}) : Matrix::Zero(n, 1);
    mp.C = plant.contains("C") ? ps.matrix(plant.at("C"), {"plant", "C"}) : Matrix::Identity(n, n);
    mp.Q = ps.matrix(ps.need(plant, {"plant", "Q"}), {"plant", "Q"});
    mp.Upsilon = plant.contains("Upsilon") ? ps.matrix(plant.at("Upsilon"), {"plant", "Upsilon"})
                                           : Matrix::Identity(n, mp.Q.rows());
    mp.x0 = plant.contains("x0") ? ps.vector(plant.at("x0"), {"plant", "x0"}) : Vector::Zero(n);
    if (plant.contains("input")) mp.input = parse_input(ps, plant.at("input"));
    if (mp.x0.size() != n) ps.fail({"plant", "x0"}, "length must equal the state dimension");
    if (mp.input.type == InputSpec::Type::constant && mp.input.value.size() != mp.B.cols())
      ps.fail({"plant", "input", "value"}, "length must equal the number of inputs");
    try {
      (void)LinearSystem::dense(mp.A, mp.B, mp.C, mp.Q, Matrix::Identity(mp.C.rows(), mp.C.rows()), mp.Upsilon);
    } catch (const ConfigError& e) {
      ps.fail({"plant"}, e.what());
    }
    cfg.plant = std::move(mp);
  } else if (type == "diffusion") {
    ps.only_keys(plant, {"plant"}, {"type", "grid_n", "alpha", "beta", "dx", "periodic", "taylor_order", "bumps"});
    DiffusionPlant dp;
    dp.spec.grid_n = ps.integer(ps.need(plant, {"plant", "grid_n"}), {"plant", "grid_n"});
    dp.spec.alpha = ps.get_or<double>(plant, {"plant", "alpha"}, 1.0);
    dp.spec.beta = ps.get_or<double>(plant, {"plant", "beta"}, 1.0);
    dp.spec.dx = ps.get_or<double>(plant, {"plant", "dx"}, 1.0 / dp.spec.grid_n);
    dp.spec.periodic = ps.get_or<bool>(plant, {"plant", "periodic"}, true);
    dp.spec.taylor_order = ps.get_or<int>(plant, {"plant", "taylor_order"}, 10);
    dp.spec.dt = cfg.dt;
    if (dp.spec.grid_n < 2) ps.fail({"plant", "grid_n"}, "must be >= 2");
    if (!(dp.spec.dx > 0.0)) ps.fail({"plant", "dx"}, "must be > 0");
    if (dp.spec.taylor_order < 1) ps.fail({"plant", "taylor_order"}, "must be >= 1");
    if (plant.contains("bumps")) {
      const auto& bumps = plant.at("bumps");
      if (!bumps.is_array()) ps.fail({"plant", "bumps"}, "expected an array");
      for (const auto& b : bumps) {
        GaussianBump g;
        g.cx = ps.number(ps.need(b, {"plant", "bumps", "cx"}), {"plant", "bumps", "cx"});
        g.cy = ps.number(ps.need(b, {"plant", "bumps", "cy"}), {"plant", "bumps", "cy"});
        g.amplitude = ps.get_or<double>(b, {"plant", "bumps", "amplitude"}, 1.0);
        g.width = ps.get_or<double>(b, {"plant", "bumps", "width"}, 1.0);
        if (g.cx < 0 || g.cy < 0 || g.cx > dp.spec.grid_n - 1 || g.cy > dp.spec.grid_n - 1)
          ps.fail({"plant", "bumps"}, "bump center outside the grid");
        if (!(g.width > 0.0)) ps.fail({"plant", "bumps", "width"}, "must be > 0");
        dp.bumps.push_back(g);
      }
    }
    n = static_cast<Index>(dp.spec.grid_n) * dp.spec.grid_n;
    cfg.plant = std::move(dp);
  } else {
    ps.fail({"plant", "type"}, "expected `matrices` or `diffusion`");
  }

  // filters
  const json& filters = ps.need(doc, {"filters"});
  if (!filters.is_array() || filters.empty()) ps.fail({"filters"}, "expected a non-empty list");
  for (const auto& f : filters) cfg.filters.push_back(parse_filter(ps, f, {"filters"}));
  for (std::size_t i = 0; i < cfg.filters.size(); ++i)
    for (std::size_t j = i + 1; j < cfg.filters.size(); ++j)
      if (cfg.filters[i].label == cfg.filters[j].label) ps.fail({"filters"}, "duplicate filter label");
  if (const auto* mp = std::get_if<MatrixPlant>(&cfg.plant)) {
    const bool selector = SelectorOutputMap::from_matrix(mp->C.sparseView()).has_value();
    for (const auto& f : cfg.filters)
      if (f.kind != FilterKind::standard && !selector)
        ps.fail({"plant", "C"}, "gradient filters need a selector C (one nonzero per row, no state read twice)");
  }

  // noise
  if (doc.contains("noise")) {
    const json& noise = doc.at("noise");
    ps.only_keys(noise, {"noise"}, {"R_scale", "sweep"});
    cfg.noise_scale = ps.get_or<double>(noise, {"noise", "R_scale"}, 1.0);
    if (!(cfg.noise_scale > 0.0)) ps.fail({"noise", "R_scale"}, "must be > 0");
    if (noise.contains("sweep")) {
      const Vector sweep = ps.vector(noise.at("sweep"), {"noise", "sweep"});
      if (sweep.size() == 0) ps.fail({"noise", "sweep"}, "sweep list must be non-empty");
      for (Index i = 0; i < sweep.size(); ++i) {
        if (!(sweep[i] > 0.0)) ps.fail({"noise", "sweep"}, "noise scales must be > 0");
        cfg.sweep.push_back(sweep[i]);
      }
    }
  }
  if (cfg.sweep.empty()) cfg.sweep.push_back(cfg.noise_scale);

  // seeds
  const json& seeds = ps.need(doc, {"seeds"});
  if (!seeds.is_array()) ps.fail({"seeds"}, "expected a list of integers");
  if (seeds.empty()) ps.fail({"seeds"}, "seeds list must be non-empty");
  for (const auto& s : seeds) {
    if (!s.is_number_unsigned()) ps.fail({"seeds"}, "seeds must be non-negative integers");
    cfg.seeds.push_back(s.get<std::uint64_t>());
  }

  // initial estimate
  cfg.x_hat0 = Vector::Zero(n);
  cfg.P0 = Vector::Ones(n);
  if (doc.contains("initial_estimate")) {
    const json& ie = doc.at("initial_estimate");
    ps.only_keys(ie, {"initial_estimate"}, {"x_hat0", "P0"});
    if (ie.contains("x_hat0")) {
      cfg.x_hat0 = ps.vector(ie.at("x_hat0"), {"initial_estimate", "x_hat0"});
      if (cfg.x_hat0.size() != n) ps.fail({"initial_estimate", "x_hat0"}, "length must equal the state dimension");
    }
    if (ie.contains("P0")) {
      const json& p0 = ie.at("P0");
      cfg.P0 = p0.is_number() ? Vector::Constant(n, p0.get<double>()) : ps.vector(p0, {"initial_estimate", "P0"});
      if (cfg.P0.size() != n) ps.fail({"initial_estimate", "P0"}, "length must equal the state dimension");
      if ((cfg.P0.array() <= 0.0).any()) ps.fail({"initial_estimate", "P0"}, "entries must be > 0");
    }
  }

  // metrics window
  const double end_time = static_cast<double>(cfg.steps() - 1) * cfg.dt;
  cfg.window_start = 0.0;
  cfg.window_end = end_time;
  if (doc.contains("metrics")) {
    const json& m = doc.at("metrics");
    ps.only_keys(m, {"metrics"}, {"window"});
    if (m.contains("window")) {
      const Vector w = ps.vector(m.at("window"), {"metrics", "window"});
      if (w.size() != 2 || !(w[0] <= w[1])) ps.fail({"metrics", "window"}, "expected [t_a, t_b] with t_a <= t_b");
      if (w[0] < 0.0 || w[1] > end_time + 1e-9) ps.fail({"metrics", "window"}, "window lies outside the horizon");
      cfg.window_start = w[0];
      cfg.window_end = w[1];
    }
  }

  // network and snapshot
  if (doc.contains("network")) cfg.network = parse_network(ps, doc.at("network"));
  if (std::holds_alternative<DiffusionPlant>(cfg.plant)) {
    if (!cfg.network) ps.fail({"network"}, "diffusion scenarios need a sensor network");
    for (const auto& f : cfg.filters)
      if (f.kind == FilterKind::standard)
        ps.fail({"filters"}, "the consensus filter runs gradient filters only; remove `standard`");
    if (cfg.filters.size() != 1) ps.fail({"filters"}, "network scenarios take exactly one filter");
  } else if (cfg.network) {
    ps.fail({"network"}, "networks are supported for diffusion plants only");
  }
  cfg.snapshot_time = end_time;
  if (doc.contains("snapshot")) {
    const json& s = doc.at("snapshot");
    ps.only_keys(s, {"snapshot"}, {"time", "node"});
    cfg.snapshot_time = ps.get_or<double>(s, {"snapshot", "time"}, end_time);
    cfg.snapshot_node = ps.get_or<int>(s, {"snapshot", "node"}, 0);
    if (cfg.snapshot_time < 0.0 || cfg.snapshot_time > end_time + 1e-9)
      ps.fail({"snapshot", "time"}, "snapshot time lies outside the horizon");
    if (cfg.snapshot_node < 0) ps.fail({"snapshot", "node"}, "must be >= 0");
  }

  if (doc.contains("output")) {
    const json& o = doc.at("output");
    ps.only_keys(o, {"output"}, {"directory"});
    cfg.output_dir = ps.get_or<std::string>(o, {"output", "directory"}, cfg.output_dir);
  }
  return cfg;
}

ScenarioConfig load_scenario(const std::string& path, bool full_scale) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_scenario(ss.str(), full_scale);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    // "config:<line>: ..." -> "<path>:<line>: ..."
    throw ConfigError(path + msg.substr(std::string("config").size()));
  }
}

// ---------------------------------------------------------------------------
// Running

double median_of(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

double SweepResult::median(std::size_t s, std::size_t a) const { return median_of(error[s][a]); }

std::size_t SweepResult::series_index(const std::string& label) const {
  const auto it = std::find(series.begin(), series.end(), label);
  if (it == series.end()) throw ConfigError("no series named " + label);
  return static_cast<std::size_t>(it - series.begin());
}

SensorNetwork build_network(const ScenarioConfig& cfg, const NetworkSpec& spec, int grid_n) {
  (void)cfg;
  if (spec.patch_side < 1 || spec.patch_side > grid_n)
    throw ConfigError("network: patch_side must lie in [1, grid_n]");
  const auto patches = patch_sensor_cover(grid_n, spec.patch_side);
  Graph graph;
  switch (spec.layout) {
    case NetworkSpec::Layout::patch_grid:
      graph = patch_grid_graph(grid_n, spec.patch_side);
      break;
    case NetworkSpec::Layout::geometric: {
      const double r = spec.radius ? *spec.radius : tune_radius_for_edges(spec.nodes, spec.target_edges, spec.graph_seed);
      graph = generate_geometric_graph(spec.nodes, r, spec.graph_seed).graph;
      break;
    }
    case NetworkSpec::Layout::file:
      graph = load_graph(spec.file);
      break;
  }
  std::vector<NodeSensor> sensors;
  for (int j = 0; j < graph.node_count(); ++j) {
    const auto& patch = patches[static_cast<std::size_t>(j) % patches.size()];
    SelectorOutputMap C = patch_output_map(patch, grid_n, spec.wrap);
    const Index p = C.output_dim();
    sensors.push_back(NodeSensor{std::move(C), Vector::Constant(p, spec.sensor_variance)});
  }
  SensorNetwork net(std::move(graph), std::move(sensors));
  if (!net.covers_all_states())
    throw ConfigError("network: some grid points are read by no sensor (need at least " +
                      std::to_string(patches.size()) + " nodes)");
  return net;
}

namespace {

void check_phat(const GradCovState& st, InvariantLog& log) {
  ++log.phat_checks;
  const Vector p = st.beta.array().exp().matrix();
  if (!p.allFinite() || (p.array() <= 0.0).any()) ++log.phat_violations;
}

void check_kf(const KalmanState& st, InvariantLog& log) {
  ++log.kf_checks;
  const double asym = (st.P - st.P.transpose()).cwiseAbs().maxCoeff();
  log.max_kf_asymmetry = std::max(log.max_kf_asymmetry, asym);
  Eigen::LLT<Matrix> llt(st.P);
  if (asym > 1e-10 || llt.info() != Eigen::Success) ++log.kf_violations;
}

void merge(InvariantLog& into, const InvariantLog& from) {
  into.phat_checks += from.phat_checks;
  into.phat_violations += from.phat_violations;
  into.kf_checks += from.kf_checks;
  into.kf_violations += from.kf_violations;
  into.max_kf_asymmetry = std::max(into.max_kf_asymmetry, from.max_kf_asymmetry);
}

template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, std::max<std::size_t>(count, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct SeriesRun {
  std::vector<std::vector<Vector>> estimates;  // per series, per step
  InvariantLog invariants;
};

/// Filters one simulated trace with every configured filter.
SeriesRun filter_trace(const ScenarioConfig& cfg, const LinearSystem& sys, const SimTrace& trace, bool with_data) {
  SeriesRun run;
  const std::size_t steps = trace.measurements.size();
  if (with_data) {
    const auto C = *sys.selector();
    std::vector<Vector> data;
    data.reserve(steps);
    for (const auto& y : trace.measurements) {
      Vector x(sys.n());
      for (Index r = 0; r < C.output_dim(); ++r) x[C.index(r)] = y[r] / C.gain(r);
      data.push_back(std::move(x));
    }
    run.estimates.push_back(std::move(data));
  }
  for (const auto& f : cfg.filters) {
    std::vector<Vector> est;
    est.reserve(steps);
    if (f.kind == FilterKind::standard) {
      KalmanState st{cfg.x_hat0, Matrix(cfg.P0.asDiagonal()), 0, {}};
      for (std::size_t k = 0; k < steps; ++k) {
        st = kf_step(sys, st, trace.measurements[k], trace.inputs[k]);
        check_kf(st, run.invariants);
        est.push_back(st.x_filtered);
      }
    } else {
      const GradientOptions o = f.scaled_options(sys.R().mean());
      const GradientKalmanFilter filter(sys, o);
      GradCovState st = initial_grad_cov_state(cfg.x_hat0, cfg.P0, o.adaptive ? o.initial_mu : o.fixed_mu);
      for (std::size_t k = 0; k < steps; ++k) {
        try {
          st = filter.step(st, trace.measurements[k], trace.inputs[k]);
        } catch (const NumericalError& e) {
          throw NumericalError("filter `" + f.label + "`: " + e.what());
        }
        check_phat(st, run.invariants);
        est.push_back(st.x_filtered);
      }
    }
    run.estimates.push_back(std::move(est));
  }
  return run;
}

std::string json_text(const json& j) { return j.dump(2) + "\n"; }

ScenarioResult run_matrix(const ScenarioConfig& cfg, const MatrixPlant& mp, const RunOptions& opts,
                          const std::vector<std::uint64_t>& seeds, const std::string& out_dir) {
  const Index p = mp.C.rows();
  const LinearSystem base = LinearSystem::dense(mp.A, mp.B, mp.C, mp.Q, Matrix::Identity(p, p), mp.Upsilon);
  const bool with_data = base.selector().has_value() && p == base.n();

  SweepResult res;
  res.alphas = cfg.sweep;
  res.seeds = seeds;
  if (with_data) res.series.push_back("data");
  for (const auto& f : cfg.filters) res.series.push_back(f.label);
  res.error.assign(res.series.size(),
                   std::vector<std::vector<double>>(res.alphas.size(), std::vector<double>(seeds.size(), 0.0)));

  const int N = cfg.steps();
  std::vector<Vector> inputs;
  inputs.reserve(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) inputs.push_back(mp.input.at(k * cfg.dt, base.m()));

  const std::size_t jobs = seeds.size() * res.alphas.size();
  std::vector<InvariantLog> logs(jobs);
  std::vector<std::string> files(jobs);
  parallel_for(jobs, opts.threads, [&](std::size_t job) {
    const std::size_t si = job / res.alphas.size();
    const std::size_t ai = job % res.alphas.size();
    const LinearSystem sys = base.with_output(base.C(), Vector::Constant(p, res.alphas[ai]));
    const SimTrace trace = simulate(sys, mp.x0, inputs, N, seeds[si], cfg.dt);
    const SeriesRun run = filter_trace(cfg, sys, trace, with_data);
    logs[job] = run.invariants;
    const std::vector<Vector> truth(trace.states.begin(), trace.states.begin() + N);
    for (std::size_t s = 0; s < res.series.size(); ++s)
      res.error[s][ai][si] = steady_state_error(run.estimates[s], truth, cfg.window_start, cfg.window_end, cfg.dt);

    if (!opts.write_files) return;
    TraceTable table;
    for (int k = 0; k < N; ++k) {
      const double t = k * cfg.dt;
      const auto ku = static_cast<std::size_t>(k);
      for (Index c = 0; c < base.n(); ++c) table.add(k, t, "truth", c, truth[ku][c]);
      for (std::size_t s = 0; s < res.series.size(); ++s)
        for (Index c = 0; c < base.n(); ++c) table.add(k, t, res.series[s], c, run.estimates[s][ku][c]);
      for (std::size_t s = 0; s < res.series.size(); ++s)
        table.add(k, t, "error_" + res.series[s], 0, (run.estimates[s][ku] - truth[ku]).norm());
    }
    files[job] = (std::filesystem::path(out_dir) /
                  ("trace_seed" + std::to_string(seeds[si]) + "_alpha" + std::to_string(ai) + ".csv"))
                     .string();
    write_file_atomic(files[job], table.str());
  });
  for (const auto& l : logs) merge(res.invariants, l);

  ScenarioResult out;
  if (opts.write_files) {
    out.files = files;
    std::string sweep = "alpha,seed,series,steady_state_error\n";
    std::string medians = "alpha,series,median_steady_state_error\n";
    json summary;
    summary["scenario"] = cfg.name;
    summary["window"] = {cfg.window_start, cfg.window_end};
    summary["seeds"] = seeds;
    for (std::size_t a = 0; a < res.alphas.size(); ++a) {
      json point;
      point["alpha"] = res.alphas[a];
      for (std::size_t s = 0; s < res.series.size(); ++s) {
        for (std::size_t i = 0; i < seeds.size(); ++i)
          sweep += format_double(res.alphas[a]) + "," + std::to_string(seeds[i]) + "," + res.series[s] + "," +
                   format_double(res.error[s][a][i]) + "\n";
        medians += format_double(res.alphas[a]) + "," + res.series[s] + "," + format_double(res.median(s, a)) + "\n";
        point["median_steady_state_error"][res.series[s]] = res.median(s, a);
      }
      summary["sweep"].push_back(point);
    }
    summary["invariants"] = {{"phat_checks", res.invariants.phat_checks},
                             {"phat_violations", res.invariants.phat_violations},
                             {"kf_checks", res.invariants.kf_checks},
                             {"kf_violations", res.invariants.kf_violations}};
    const auto dir = std::filesystem::path(out_dir);
    for (const auto& [name, body] : {std::pair{"sweep.csv", sweep}, std::pair{"sweep_median.csv", medians},
                                     std::pair{"summary.json", json_text(summary)}}) {
      out.files.push_back((dir / name).string());
      write_file_atomic(out.files.back(), body);
    }
  }
  out.result = std::move(res);
  return out;
}

ScenarioResult run_network(const ScenarioConfig& cfg, const DiffusionPlant& dp, const RunOptions& opts,
                           const std::vector<std::uint64_t>& seeds, const std::string& out_dir) {
  const LinearSystem sys = build_diffusion(dp.spec);
  const SensorNetwork net = build_network(cfg, *cfg.network, dp.spec.grid_n);
  const Vector x0 = gaussian_bumps_initial(dp.spec.grid_n, dp.bumps);
  const double epsilon = cfg.network->epsilon_fastest_mixing ? fastest_mixing_weight(net.graph())
                                                             : cfg.network->epsilon.value_or(cfg.dt);
  const GradientOptions gopts = cfg.filters.front().scaled_options(cfg.network->sensor_variance);
  const double mu0 = gopts.adaptive ? gopts.initial_mu : gopts.fixed_mu;
  const int N = cfg.steps();
  const Index n = sys.n();
  const std::vector<int> coverage = net.coverage();

  NetworkRunResult res;
  res.seeds = seeds;
  res.snapshot_step = static_cast<int>(std::lround(cfg.snapshot_time / cfg.dt));
  res.snapshot_node = cfg.snapshot_node;
  res.node_count = static_cast<std::size_t>(net.node_count());
  res.edge_count = net.graph().edge_count();
  if (res.snapshot_node >= net.node_count())
    throw ConfigError("snapshot node " + std::to_string(res.snapshot_node) + " does not exist");
  res.node_mse.assign(seeds.size(), 0.0);
  res.aggregate_mse.assign(seeds.size(), 0.0);
  res.disagreement.assign(seeds.size(), {});
  std::vector<InvariantLog> logs(seeds.size());
  std::vector<std::string> files;
  std::vector<std::array<std::string, 2>> seed_files(seeds.size());

  parallel_for(seeds.size(), opts.threads, [&](std::size_t si) {
    const SimTrace truth = simulate(sys, x0, {}, N, seeds[si], cfg.dt);
    const auto meas = simulate_node_measurements(
        net, std::vector<Vector>(truth.states.begin(), truth.states.begin() + N), derive_seed(seeds[si], 1));
    std::vector<NodeState> nodes;
    for (int j = 0; j < net.node_count(); ++j) nodes.push_back(NodeState{j, initial_grad_cov_state(cfg.x_hat0, cfg.P0, mu0)});
    const Vector u = Vector::Zero(sys.m());
    TraceTable dis_table;
    TraceTable snap_table;
    for (int k = 0; k < N; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      try {
        nodes = dkcf_step(net, sys, nodes, meas[ku], u, epsilon, gopts);
      } catch (const NumericalError& e) {
        throw NumericalError("filter `" + cfg.filters.front().label + "`: " + e.what());
      }
      std::vector<Vector> est;
      est.reserve(nodes.size());
      for (const auto& nd : nodes) {
        check_phat(nd.grad_cov, logs[si]);
        est.push_back(nd.grad_cov.x_filtered);
      }
      const double d = disagreement(est);
      res.disagreement[si].push_back(d);
      dis_table.add(k, k * cfg.dt, "disagreement", 0, d);
      if (k == res.snapshot_step) {
        const Vector& x = truth.states[ku];
        Vector agg = Vector::Zero(n);
        for (int j = 0; j < net.node_count(); ++j) agg += net.sensor(j).C.apply_transpose(meas[ku][static_cast<std::size_t>(j)]);
        for (Index i = 0; i < n; ++i) agg[i] /= coverage[static_cast<std::size_t>(i)];
        const Vector& node_est = est[static_cast<std::size_t>(res.snapshot_node)];
        res.node_mse[si] = (node_est - x).squaredNorm() / static_cast<double>(n);
        res.aggregate_mse[si] = (agg - x).squaredNorm() / static_cast<double>(n);
        const std::string node_series = "node" + std::to_string(res.snapshot_node) + "_estimate";
        for (Index i = 0; i < n; ++i) snap_table.add(k, k * cfg.dt, "truth", i, x[i]);
        for (Index i = 0; i < n; ++i) snap_table.add(k, k * cfg.dt, "aggregate_measurement", i, agg[i]);
        for (Index i = 0; i < n; ++i) snap_table.add(k, k * cfg.dt, node_series, i, node_est[i]);
      }
    }
    if (!opts.write_files) return;
    const auto dir = std::filesystem::path(out_dir);
    seed_files[si][0] = (dir / ("snapshot_seed" + std::to_string(seeds[si]) + ".csv")).string();
    seed_files[si][1] = (dir / ("disagreement_seed" + std::to_string(seeds[si]) + ".csv")).string();
    write_file_atomic(seed_files[si][0], snap_table.str());
    write_file_atomic(seed_files[si][1], dis_table.str());
  });
  for (const auto& l : logs) merge(res.invariants, l);

  ScenarioResult out;
  if (opts.write_files) {
    for (const auto& f : seed_files) out.files.insert(out.files.end(), f.begin(), f.end());
    json summary;
    summary["scenario"] = cfg.name;
    summary["grid_n"] = dp.spec.grid_n;
    summary["nodes"] = res.node_count;
    summary["edges"] = res.edge_count;
    summary["epsilon"] = epsilon;
    summary["snapshot_step"] = res.snapshot_step;
    summary["snapshot_node"] = res.snapshot_node;
    summary["seeds"] = seeds;
    summary["node_mse"] = res.node_mse;
    summary["aggregate_mse"] = res.aggregate_mse;
    summary["median_node_mse"] = median_of(res.node_mse);
    summary["median_aggregate_mse"] = median_of(res.aggregate_mse);
    summary["invariants"] = {{"phat_checks", res.invariants.phat_checks},
                             {"phat_violations", res.invariants.phat_violations}};
    out.files.push_back((std::filesystem::path(out_dir) / "summary.json").string());
    write_file_atomic(out.files.back(), json_text(summary));
  }
  out.result = std::move(res);
  return out;
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& cfg, const RunOptions& opts) {
  const std::vector<std::uint64_t> seeds = opts.seed_override ? std::vector<std::uint64_t>{*opts.seed_override} : cfg.seeds;
  if (seeds.empty()) throw ConfigError("no seeds to run");
  const std::string out_dir = opts.output_dir.value_or(cfg.output_dir);
  if (opts.write_files) std::filesystem::create_directories(out_dir);
  if (const auto* mp = std::get_if<MatrixPlant>(&cfg.plant)) return run_matrix(cfg, *mp, opts, seeds, out_dir);
  return run_network(cfg, std::get<DiffusionPlant>(cfg.plant), opts, seeds, out_dir);
}

}  // namespace gradkf
