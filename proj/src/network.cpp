#include "gradkf/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>

#include "gradkf/errors.hpp"
#include "gradkf/rng.hpp"

namespace gradkf {

// ---------------------------------------------------------------------------
// Graph

Graph::Graph(int node_count, std::vector<std::pair<int, int>> edges) : node_count_(node_count) {
  if (node_count < 0) throw ConfigError("graph: negative node count");
  for (auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= node_count || b >= node_count)
      throw ConfigError("graph: edge {" + std::to_string(a) + "," + std::to_string(b) + "} out of range");
    if (a == b) throw ConfigError("graph: self-loop at node " + std::to_string(a));
    if (a > b) std::swap(a, b);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  edges_ = std::move(edges);
  adjacency_.assign(static_cast<std::size_t>(node_count), {});
  for (const auto& [a, b] : edges_) {
    adjacency_[static_cast<std::size_t>(a)].push_back(b);
    adjacency_[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& nb : adjacency_) std::sort(nb.begin(), nb.end());
}

Graph read_graph(std::istream& in) {
  std::string line;
  int line_no = 0;
  int nodes = -1;
  std::vector<std::pair<int, int>> edges;
  auto fail = [&](const std::string& what) {
    throw ConfigError("graph file line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (nodes < 0) {
      if (first != "nodes" || !(ls >> nodes) || nodes < 0) fail("expected `nodes <N>`");
    } else {
      int a = 0;
      int b = 0;
      std::istringstream fs(first);
      if (!(fs >> a) || !fs.eof() || !(ls >> b)) fail("expected `<i> <j>`");
      if (a >= b) fail("edge endpoints must satisfy i < j");
      if (b >= nodes) fail("node index " + std::to_string(b) + " >= node count");
      edges.emplace_back(a, b);
    }
    std::string extra;
    if (ls >> extra) fail("unexpected trailing token `" + extra + "`");
  }
  if (nodes < 0) throw ConfigError("graph file: missing `nodes <N>` header");
  return Graph(nodes, std::move(edges));
}

void write_graph(std::ostream& out, const Graph& g) {
  out << "nodes " << g.node_count() << "\n";
  for (const auto& [a, b] : g.edges()) out << a << " " << b << "\n";
}

Graph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open graph file " + path);
  return read_graph(in);
}

void save_graph(const std::string& path, const Graph& g) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write graph file " + path);
  write_graph(out, g);
}

// ---------------------------------------------------------------------------
// Geometric graphs

namespace {

std::vector<std::array<double, 2>> place_nodes(int node_count, std::uint64_t seed) {
  NormalSource rng(seed);
  std::vector<std::array<double, 2>> pos(static_cast<std::size_t>(node_count));
  for (auto& p : pos) {
    p[0] = rng.uniform();
    p[1] = rng.uniform();
  }
  return pos;
}

Graph connect_within(const std::vector<std::array<double, 2>>& pos, double radius) {
  std::vector<std::pair<int, int>> edges;
  const double r2 = radius * radius;
  const int n = static_cast<int>(pos.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double dx = pos[static_cast<std::size_t>(i)][0] - pos[static_cast<std::size_t>(j)][0];
      const double dy = pos[static_cast<std::size_t>(i)][1] - pos[static_cast<std::size_t>(j)][1];
      if (dx * dx + dy * dy <= r2) edges.emplace_back(i, j);
    }
  return Graph(n, std::move(edges));
}

}  // namespace

GeometricGraph generate_geometric_graph(int node_count, double radius, std::uint64_t seed) {
  if (node_count < 1) throw ConfigError("geometric graph: node_count must be >= 1");
  if (!(radius >= 0.0)) throw ConfigError("geometric graph: radius must be >= 0");
  GeometricGraph out;
  out.positions = place_nodes(node_count, seed);
  out.graph = connect_within(out.positions, radius);
  out.radius = radius;
  return out;
}

double tune_radius_for_edges(int node_count, std::size_t target_edges, std::uint64_t seed) {
  if (node_count < 1) throw ConfigError("geometric graph: node_count must be >= 1");
  const auto pos = place_nodes(node_count, seed);
  // Smallest radius reaching the target, then compare with the count just below it.
  double lo = 0.0;
  double hi = std::sqrt(2.0);
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (connect_within(pos, mid).edge_count() >= target_edges)
      hi = mid;
    else
      lo = mid;
  }
  const auto above = connect_within(pos, hi).edge_count();
  const auto below = connect_within(pos, lo).edge_count();
  const auto dist = [&](std::size_t c) { return c > target_edges ? c - target_edges : target_edges - c; };
  return dist(below) < dist(above) ? lo : hi;
}

// ---------------------------------------------------------------------------
// Patch sensors

std::vector<Index> PatchSensor::cells(int grid_n, bool wrap) const {
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(side) * side);
  for (int dc = 0; dc < side; ++dc)
    for (int dr = 0; dr < side; ++dr) {
      int r = row + dr;
      int c = col + dc;
      if (wrap) {
        r %= grid_n;
        c %= grid_n;
      } else if (r >= grid_n || c >= grid_n) {
        continue;
      }
      out.push_back(grid_index(r, c, grid_n));
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<PatchSensor> patch_sensor_cover(int grid_n, int n_l) {
  if (grid_n < 1 || n_l < 1 || n_l > grid_n)
    throw ConfigError("patch cover: need 1 <= n_l <= grid_n, got n_l=" + std::to_string(n_l) +
                      " grid_n=" + std::to_string(grid_n));
  const int per_axis = (grid_n + n_l - 1) / n_l;
  std::vector<PatchSensor> out;
  out.reserve(static_cast<std::size_t>(per_axis) * per_axis);
  for (int b = 0; b < per_axis; ++b)
    for (int a = 0; a < per_axis; ++a) out.push_back(PatchSensor{a * n_l, b * n_l, n_l});
  return out;
}

SelectorOutputMap patch_output_map(const PatchSensor& patch, int grid_n, bool wrap) {
  auto idx = patch.cells(grid_n, wrap);
  const auto p = static_cast<Index>(idx.size());
  return SelectorOutputMap(static_cast<Index>(grid_n) * grid_n, std::move(idx), Vector::Ones(p));
}

double fastest_mixing_weight(const Graph& g) {
  if (g.edge_count() == 0) throw ConfigError("fastest_mixing: graph has no edges");
  const int n = g.node_count();
  Matrix L = Matrix::Zero(n, n);
  for (const auto& [i, j] : g.edges()) {
    L(i, j) -= 1.0;
    L(j, i) -= 1.0;
    L(i, i) += 1.0;
    L(j, j) += 1.0;
  }
  const Vector lam = Eigen::SelfAdjointEigenSolver<Matrix>(L, Eigen::EigenvaluesOnly).eigenvalues();
  const double lmax = lam[n - 1];
  double l2 = lmax;
  for (Index k = 0; k < n; ++k)
    if (lam[k] > 1e-9 * lmax) {
      l2 = lam[k];
      break;
    }
  return 2.0 / (l2 + lmax);
}

Graph patch_grid_graph(int grid_n, int n_l) {
  const auto patches = patch_sensor_cover(grid_n, n_l);
  const int per_axis = (grid_n + n_l - 1) / n_l;
  std::vector<std::pair<int, int>> edges;
  for (int b = 0; b < per_axis; ++b)
    for (int a = 0; a < per_axis; ++a) {
      const int id = a + b * per_axis;
      if (a + 1 < per_axis) edges.emplace_back(id, id + 1);
      if (b + 1 < per_axis) edges.emplace_back(id, id + per_axis);
    }
  return Graph(static_cast<int>(patches.size()), std::move(edges));
}

// ---------------------------------------------------------------------------
// SensorNetwork

SensorNetwork::SensorNetwork(Graph graph, std::vector<NodeSensor> sensors)
    : graph_(std::move(graph)), sensors_(std::move(sensors)) {
  if (static_cast<int>(sensors_.size()) != graph_.node_count())
    throw ConfigError("sensor network: " + std::to_string(sensors_.size()) + " sensors for " +
                      std::to_string(graph_.node_count()) + " nodes");
  if (sensors_.empty()) throw ConfigError("sensor network: no nodes");
  state_dim_ = sensors_.front().C.state_dim();
  for (std::size_t j = 0; j < sensors_.size(); ++j) {
    const auto& s = sensors_[j];
    if (s.C.state_dim() != state_dim_)
      throw ConfigError("sensor network: node " + std::to_string(j) + " reads a different state dimension");
    if (s.R.size() != s.C.output_dim() || (s.R.array() <= 0.0).any())
      throw ConfigError("sensor network: node " + std::to_string(j) + " needs a positive R per output");
  }
}

std::vector<int> SensorNetwork::coverage() const {
  std::vector<int> count(static_cast<std::size_t>(state_dim_), 0);
  for (const auto& s : sensors_)
    for (Index i : s.C.indices()) ++count[static_cast<std::size_t>(i)];
  return count;
}

bool SensorNetwork::covers_all_states() const {
  const auto c = coverage();
  return std::all_of(c.begin(), c.end(), [](int v) { return v >= 1; });
}

// ---------------------------------------------------------------------------
// Kalman-consensus filter

Aggregate aggregate(const SensorNetwork& net, int j, const std::vector<Vector>& measurements) {
  if (j < 0 || j >= net.node_count()) throw ConfigError("aggregate: node " + std::to_string(j) + " out of range");
  if (static_cast<int>(measurements.size()) != net.node_count())
    throw ConfigError("aggregate: expected measurements for " + std::to_string(net.node_count()) + " nodes, got " +
                      std::to_string(measurements.size()));
  Aggregate agg{Vector::Zero(net.state_dim()), Vector::Zero(net.state_dim())};
  auto add = [&](int l) {
    const auto& s = net.sensor(l);
    const Vector& y = measurements[static_cast<std::size_t>(l)];
    if (y.size() != s.C.output_dim())
      throw ConfigError("aggregate: missing or malformed measurement from node " + std::to_string(l));
    for (Index r = 0; r < s.C.output_dim(); ++r) {
      const Index i = s.C.index(r);
      const double c = s.C.gain(r);
      agg.S_diag[i] += c * c;
      agg.y[i] += c * y[r];
    }
  };
  add(j);
  for (int l : net.graph().neighbors(j)) add(l);
  const double inv = 1.0 / static_cast<double>(net.graph().neighbors(j).size() + 1);
  agg.S_diag *= inv;
  agg.y *= inv;
  return agg;
}

namespace {

NodeState consensus_update(const SensorNetwork& net, const LinearSystem& sys, const std::vector<NodeState>& states,
                           const std::vector<Vector>& measurements, const Vector& u, double epsilon,
                           const GradientOptions& opts, int j) {
  const auto& sensor = net.sensor(j);
  const GradCovState& st = states[static_cast<std::size_t>(j)].grad_cov;
  const Aggregate agg = aggregate(net, j, measurements);
  const Vector delta = measurements[static_cast<std::size_t>(j)] - sensor.C.apply(st.x_hat);
  CovarianceUpdate upd = advance_covariance(sensor.C, sensor.R, st, delta, opts);

  const auto& nbrs = net.graph().neighbors(j);
  Vector x = st.x_hat;
  if (nbrs.empty()) {
    for (Index r = 0; r < sensor.C.output_dim(); ++r) {
      const Index i = sensor.C.index(r);
      const double c = sensor.C.gain(r);
      const double e = std::exp(st.beta[i]);
      const double D = sensor.R[r] + e * c * c;
      x[i] += (e / D) * (agg.y[i] - agg.S_diag[i] * st.x_hat[i]);
    }
  } else {
    Vector consensus = Vector::Zero(st.x_hat.size());
    for (int l : nbrs) consensus += states[static_cast<std::size_t>(l)].grad_cov.x_hat - st.x_hat;
    consensus *= epsilon;
    x += consensus;  // unread states: consensus at unit gain
    for (Index r = 0; r < sensor.C.output_dim(); ++r) {
      const Index i = sensor.C.index(r);
      const double c = sensor.C.gain(r);
      const double e = std::exp(st.beta[i]);
      const double D = sensor.R[r] + e * c * c;
      x[i] = st.x_hat[i] + (e / D) * (agg.y[i] - agg.S_diag[i] * st.x_hat[i] + consensus[i]);
    }
  }

  NodeState next;
  next.node_id = states[static_cast<std::size_t>(j)].node_id;
  GradCovState& g = next.grad_cov;
  g.x_filtered = std::move(x);
  g.x_hat = sys.A() * g.x_filtered + sys.B() * u;
  g.beta_prev = st.beta;
  g.alpha_prev = std::move(upd.eval_point);
  g.grad_prev = std::move(upd.grad);
  g.beta = std::move(upd.beta);
  g.h = std::move(upd.h);
  g.mu = upd.mu;
  g.k = st.k + 1;
  check_finite(g, ("consensus filter node " + std::to_string(j)).c_str());
  return next;
}

}  // namespace

std::vector<NodeState> dkcf_step(const SensorNetwork& net, const LinearSystem& sys,
                                 const std::vector<NodeState>& states, const std::vector<Vector>& measurements,
                                 const Vector& u, double epsilon, const GradientOptions& opts, int threads) {
  if (!(epsilon > 0.0)) throw ConfigError("consensus filter: epsilon must be > 0");
  const int nodes = net.node_count();
  if (static_cast<int>(states.size()) != nodes) throw ConfigError("consensus filter: one state per node required");
  if (net.state_dim() != sys.n()) throw ConfigError("consensus filter: network and plant state dimensions differ");
  if (u.size() != sys.m()) throw ConfigError("consensus filter: input has the wrong length");
  for (int j = 0; j < nodes; ++j) {
    const auto& s = states[static_cast<std::size_t>(j)].grad_cov;
    if (s.x_hat.size() != sys.n() || s.beta.size() != sys.n())
      throw ConfigError("consensus filter: node " + std::to_string(j) + " state has the wrong dimension");
    if (s.k != states.front().grad_cov.k) throw ConfigError("consensus filter: nodes are at different steps");
  }

  std::vector<NodeState> next(static_cast<std::size_t>(nodes));
  auto run_range = [&](int begin, int end) {
    for (int j = begin; j < end; ++j)
      next[static_cast<std::size_t>(j)] = consensus_update(net, sys, states, measurements, u, epsilon, opts, j);
  };
  const int workers = std::clamp(threads, 1, nodes);
  if (workers == 1) {
    run_range(0, nodes);
    return next;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      const int begin = nodes * w / workers;
      const int end = nodes * (w + 1) / workers;
      pool.emplace_back([&, w, begin, end] {
        try {
          run_range(begin, end);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return next;
}

std::vector<std::vector<Vector>> simulate_node_measurements(const SensorNetwork& net,
                                                            const std::vector<Vector>& states,
                                                            std::uint64_t seed) {
  NormalSource normal(seed);
  std::vector<std::vector<Vector>> out;
  out.reserve(states.size());
  for (const auto& x : states) {
    if (x.size() != net.state_dim()) throw ConfigError("simulate_node_measurements: state has the wrong length");
    std::vector<Vector> round;
    round.reserve(static_cast<std::size_t>(net.node_count()));
    for (const auto& s : net.sensors()) {
      Vector y = s.C.apply(x);
      for (Index r = 0; r < y.size(); ++r) y[r] += std::sqrt(s.R[r]) * normal();
      round.push_back(std::move(y));
    }
    out.push_back(std::move(round));
  }
  return out;
}

}  // namespace gradkf
