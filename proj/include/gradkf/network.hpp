#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "gradkf/filters.hpp"
#include "gradkf/model.hpp"

namespace gradkf {

/// Undirected simple graph. Each edge is stored once as (i, j) with i < j.
class Graph {
 public:
  Graph() = default;
  /// Edges may be given in either orientation; duplicates are merged.
  /// Self-loops and out-of-range endpoints throw ConfigError.
  Graph(int node_count, std::vector<std::pair<int, int>> edges);

  int node_count() const { return node_count_; }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  /// Sorted neighbor indices of node i.
  const std::vector<int>& neighbors(int i) const { return adjacency_[static_cast<std::size_t>(i)]; }

 private:
  int node_count_ = 0;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> adjacency_;
};

/// Graph text format: a `nodes <N>` line, then one `<i> <j>` edge per line
/// (0-based, i < j). `#` starts a comment; blank lines are ignored.
Graph read_graph(std::istream& in);
void write_graph(std::ostream& out, const Graph& g);
Graph load_graph(const std::string& path);
void save_graph(const std::string& path, const Graph& g);

struct GeometricGraph {
  Graph graph;
  std::vector<std::array<double, 2>> positions;
  double radius = 0.0;
};

/// Nodes uniform in the unit square, edge iff Euclidean distance <= radius.
GeometricGraph generate_geometric_graph(int node_count, double radius, std::uint64_t seed);

/// Radius (found by bisection) whose geometric graph for `seed` has an edge
/// count as close to target_edges as possible.
double tune_radius_for_edges(int node_count, std::size_t target_edges, std::uint64_t seed);

/// Best constant consensus weight 2 / (lambda_2 + lambda_max) of the graph
/// Laplacian, where lambda_2 is the smallest nonzero eigenvalue (so that
/// disconnected graphs mix within components). Throws for edgeless graphs.
double fastest_mixing_weight(const Graph& g);

/// n_l x n_l square of grid points with top-left corner (row, col).
struct PatchSensor {
  int row = 0;
  int col = 0;
  int side = 1;

  /// State indices covered; past the grid edge the patch wraps when `wrap`
  /// is set and is clipped otherwise.
  std::vector<Index> cells(int grid_n, bool wrap) const;
};

/// ceil(grid_n / n_l)^2 patches at origins (a n_l, b n_l).
std::vector<PatchSensor> patch_sensor_cover(int grid_n, int n_l);

/// Unit-gain selector reading the patch's cells (ascending state order).
SelectorOutputMap patch_output_map(const PatchSensor& patch, int grid_n, bool wrap);

/// 4-neighbor graph over the patch layout returned by patch_sensor_cover.
Graph patch_grid_graph(int grid_n, int n_l);

struct NodeSensor {
  SelectorOutputMap C;
  Vector R;  // diagonal, strictly positive
};

class SensorNetwork {
 public:
  SensorNetwork(Graph graph, std::vector<NodeSensor> sensors);

  const Graph& graph() const { return graph_; }
  const std::vector<NodeSensor>& sensors() const { return sensors_; }
  const NodeSensor& sensor(int j) const { return sensors_[static_cast<std::size_t>(j)]; }
  int node_count() const { return graph_.node_count(); }
  Index state_dim() const { return state_dim_; }

  /// Number of sensors reading each state.
  std::vector<int> coverage() const;
  bool covers_all_states() const;

 private:
  Graph graph_;
  std::vector<NodeSensor> sensors_;
  Index state_dim_ = 0;
};

struct NodeState {
  int node_id = 0;
  GradCovState grad_cov;
};

/// Neighborhood averages over J = N_j + {j}:
///   S_j = |J|^-1 sum C_l^T C_l   (diagonal for selector maps; stored as its diagonal)
///   y_j = |J|^-1 sum C_l^T y_l
struct Aggregate {
  Vector S_diag;
  Vector y;
};

Aggregate aggregate(const SensorNetwork& net, int j, const std::vector<Vector>& measurements);

/// One synchronous Kalman-consensus round. Every node reads only round-k
/// values, so node evaluation order (and `threads`) does not affect results.
///
/// Node j runs the beta/h/mu recursion on its own sensor, then for each state i
///   x+_i = x_i + G_i [ (y_j - S_j x)_i + eps sum_{l in N_j} (x_l - x_j)_i ]
/// with G_i = e^beta_i / (e^beta_i c_i^2 + r_i) where node j reads state i.
/// States node j does not read take the consensus term alone, at unit gain.
/// The corrected estimate is then propagated through A and B.
std::vector<NodeState> dkcf_step(const SensorNetwork& net, const LinearSystem& sys,
                                 const std::vector<NodeState>& states, const std::vector<Vector>& measurements,
                                 const Vector& u, double epsilon, const GradientOptions& opts = {},
                                 int threads = 1);

/// Noisy readings y_l = C_l x + v_l of each state for every node;
/// result[k][l] is node l's measurement of states[k].
std::vector<std::vector<Vector>> simulate_node_measurements(const SensorNetwork& net,
                                                            const std::vector<Vector>& states,
                                                            std::uint64_t seed);

}  // namespace gradkf
