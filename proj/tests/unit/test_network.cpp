#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "gradkf/analysis.hpp"
#include "gradkf/errors.hpp"
#include "gradkf/network.hpp"
#include "gradkf/rng.hpp"

using namespace gradkf;

namespace {

LinearSystem two_state(double r) {
  Matrix A(2, 2);
  A << 1.001, 0.011, -0.0301, 0.98;
  Matrix B(2, 1);
  B << 5e-5, 1e-2;
  return LinearSystem::dense(A, B, Matrix::Identity(2, 2), 0.001 * Matrix::Identity(2, 2),
                             r * Matrix::Identity(2, 2), Matrix::Identity(2, 2));
}

std::vector<NodeState> fresh_nodes(int count, Index n) {
  std::vector<NodeState> out;
  for (int j = 0; j < count; ++j) out.push_back({j, initial_grad_cov_state(Vector::Zero(n), Vector::Ones(n))});
  return out;
}

SensorNetwork patch_network(int grid_n, int side) {
  std::vector<NodeSensor> sensors;
  for (const auto& p : patch_sensor_cover(grid_n, side)) {
    auto C = patch_output_map(p, grid_n, true);
    const Index p_dim = C.output_dim();
    sensors.push_back({std::move(C), Vector::Ones(p_dim)});
  }
  return SensorNetwork(patch_grid_graph(grid_n, side), std::move(sensors));
}

bool same_state(const GradCovState& a, const GradCovState& b) {
  return a.x_hat == b.x_hat && a.x_filtered == b.x_filtered && a.beta == b.beta && a.h == b.h && a.mu == b.mu &&
         a.grad_prev == b.grad_prev && a.alpha_prev == b.alpha_prev && a.beta_prev == b.beta_prev && a.k == b.k;
}

}  // namespace

TEST_CASE("graph normalizes edges") {
  const Graph g(4, {{2, 1}, {1, 2}, {0, 3}});
  CHECK(g.edge_count() == 2);
  CHECK(g.edges()[0] == std::pair<int, int>{0, 3});
  CHECK(g.edges()[1] == std::pair<int, int>{1, 2});
  CHECK(g.neighbors(1) == std::vector<int>{2});
  CHECK(g.neighbors(3) == std::vector<int>{0});
  CHECK_THROWS_AS(Graph(3, {{1, 1}}), ConfigError);
  CHECK_THROWS_AS(Graph(3, {{0, 3}}), ConfigError);
}

TEST_CASE("graph file round trip and errors") {
  const Graph g(5, {{0, 1}, {3, 4}, {1, 4}});
  std::stringstream ss;
  write_graph(ss, g);
  const Graph back = read_graph(ss);
  CHECK(back.node_count() == 5);
  CHECK(back.edges() == g.edges());

  std::istringstream commented("# topology\nnodes 3\n\n0 2  # long link\n");
  CHECK(read_graph(commented).edge_count() == 1);

  std::istringstream no_header("0 1\n");
  CHECK_THROWS_AS(read_graph(no_header), ConfigError);
  std::istringstream bad_edge("nodes 3\n0 1\n2 x\n");
  try {
    read_graph(bad_edge);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::istringstream reversed("nodes 3\n2 0\n");
  CHECK_THROWS_AS(read_graph(reversed), ConfigError);
}

TEST_CASE("geometric graph") {
  const auto g = generate_geometric_graph(40, 0.3, 5);
  REQUIRE(g.positions.size() == 40);
  std::set<std::pair<int, int>> expect;
  for (int i = 0; i < 40; ++i)
    for (int j = i + 1; j < 40; ++j) {
      const double dx = g.positions[i][0] - g.positions[j][0], dy = g.positions[i][1] - g.positions[j][1];
      if (std::sqrt(dx * dx + dy * dy) <= 0.3) expect.insert({i, j});
    }
  CHECK(std::set<std::pair<int, int>>(g.graph.edges().begin(), g.graph.edges().end()) == expect);
  for (const auto& p : g.positions) {
    CHECK(p[0] >= 0.0);
    CHECK(p[0] < 1.0);
  }

  CHECK(generate_geometric_graph(12, 1.5, 1).graph.edge_count() == 66);
  CHECK(generate_geometric_graph(12, 0.0, 1).graph.edge_count() == 0);
  CHECK(generate_geometric_graph(30, 0.2, 9).graph.edges() == generate_geometric_graph(30, 0.2, 9).graph.edges());

  const double r = tune_radius_for_edges(178, 186, 1);
  const auto tuned = generate_geometric_graph(178, r, 1);
  CHECK(std::abs(static_cast<double>(tuned.graph.edge_count()) - 186.0) <= 0.15 * 186.0);
}

TEST_CASE("patch cover") {
  const auto one = patch_sensor_cover(4, 4);
  REQUIRE(one.size() == 1);
  CHECK(one[0].cells(4, false).size() == 16);

  const auto four = patch_sensor_cover(4, 2);
  REQUIRE(four.size() == 4);
  std::vector<int> count(16, 0);
  for (const auto& p : four)
    for (Index i : p.cells(4, false)) ++count[static_cast<std::size_t>(i)];
  CHECK(std::all_of(count.begin(), count.end(), [](int c) { return c == 1; }));

  CHECK(patch_sensor_cover(50, 4).size() == 169);
  CHECK(patch_sensor_cover(10, 4).size() == 9);
  CHECK_THROWS_AS(patch_sensor_cover(4, 5), ConfigError);
  CHECK_THROWS_AS(patch_sensor_cover(4, 0), ConfigError);

  // Clipped patches at the far edge read fewer cells; wrapped ones always n_l^2.
  const PatchSensor corner{8, 8, 4};
  CHECK(corner.cells(10, false).size() == 4);
  CHECK(corner.cells(10, true).size() == 16);

  NormalSource rng(12);
  for (int t = 0; t < 30; ++t) {
    const int n = 2 + static_cast<int>(rng.uniform() * 20);
    const int side = 1 + static_cast<int>(rng.uniform() * n);
    for (bool wrap : {false, true}) {
      std::vector<int> c(static_cast<std::size_t>(n * n), 0);
      for (const auto& p : patch_sensor_cover(n, side))
        for (Index i : p.cells(n, wrap)) ++c[static_cast<std::size_t>(i)];
      CHECK(*std::min_element(c.begin(), c.end()) >= 1);
    }
  }
}

TEST_CASE("patch grid graph and fastest mixing weight") {
  const Graph g = patch_grid_graph(10, 4);
  CHECK(g.node_count() == 9);
  CHECK(g.edge_count() == 12);
  CHECK(g.neighbors(4).size() == 4);
  CHECK(fastest_mixing_weight(g) == doctest::Approx(2.0 / 7.0));
  CHECK(fastest_mixing_weight(Graph(2, {{0, 1}})) == doctest::Approx(0.5));
  // Two disconnected pairs mix like a single pair.
  CHECK(fastest_mixing_weight(Graph(4, {{0, 1}, {2, 3}})) == doctest::Approx(0.5));
  CHECK_THROWS_AS(fastest_mixing_weight(Graph(3, {})), ConfigError);
}

TEST_CASE("aggregation") {
  SUBCASE("isolated node") {
    Vector g(2);
    g << 2.0, 0.5;
    const SelectorOutputMap C(3, {0, 2}, g);
    const SensorNetwork net(Graph(1, {}), {{C, Vector::Ones(2)}});
    Vector y(2);
    y << 1.0, 4.0;
    const auto agg = aggregate(net, 0, {y});
    CHECK(agg.S_diag == Vector(Matrix(C.to_dense().transpose() * C.to_dense()).diagonal()));
    CHECK(agg.y == C.apply_transpose(y));
  }
  SUBCASE("two full observers") {
    const auto I = SelectorOutputMap::identity(2);
    const SensorNetwork net(Graph(2, {{0, 1}}), {{I, Vector::Ones(2)}, {I, Vector::Ones(2)}});
    Vector y1(2), y2(2);
    y1 << 1, 0;
    y2 << 0, 1;
    const auto agg = aggregate(net, 0, {y1, y2});
    CHECK(agg.y == Vector::Constant(2, 0.5));
    CHECK(agg.S_diag == Vector::Ones(2));
  }
  SUBCASE("patch sensors against brute-force summation") {
    const auto net = patch_network(4, 3);
    NormalSource rng(6);
    std::vector<Vector> meas;
    for (const auto& s : net.sensors()) {
      Vector y(s.C.output_dim());
      for (Index r = 0; r < y.size(); ++r) y[r] = rng();
      meas.push_back(y);
    }
    for (int j = 0; j < net.node_count(); ++j) {
      std::vector<int> J = net.graph().neighbors(j);
      J.push_back(j);
      Matrix S = Matrix::Zero(16, 16);
      Vector yy = Vector::Zero(16);
      for (int l : J) {
        const Matrix Cl = net.sensor(l).C.to_dense();
        S += Cl.transpose() * Cl;
        yy += Cl.transpose() * meas[static_cast<std::size_t>(l)];
      }
      S /= static_cast<double>(J.size());
      yy /= static_cast<double>(J.size());
      const auto agg = aggregate(net, j, meas);
      CHECK((Matrix(agg.S_diag.asDiagonal()) - S).norm() < 1e-15);
      CHECK((agg.y - yy).norm() < 1e-14);
    }
  }
  SUBCASE("missing neighbor data names the node") {
    const auto I = SelectorOutputMap::identity(2);
    const SensorNetwork net(Graph(2, {{0, 1}}), {{I, Vector::Ones(2)}, {I, Vector::Ones(2)}});
    try {
      aggregate(net, 0, {Vector::Ones(2), Vector::Ones(1)});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("node 1") != std::string::npos);
    }
  }
}

TEST_CASE("single-node consensus equals the centralized filter bit for bit") {
  const auto sys = two_state(0.115);
  const SensorNetwork net(Graph(1, {}), {{SelectorOutputMap::identity(2), sys.R()}});
  Vector x0(2);
  x0 << 1, 0;
  std::vector<Vector> u;
  for (int k = 0; k < 300; ++k) u.push_back(Vector::Constant(1, std::sin(M_PI * 0.01 * k)));
  const auto tr = simulate(sys, x0, u, 300, 7, 0.01);
  const GradientKalmanFilter filt(sys, {});
  GradCovState central = initial_grad_cov_state(Vector::Zero(2), Vector::Ones(2));
  auto nodes = fresh_nodes(1, 2);
  bool same = true;
  for (int k = 0; k < 300; ++k) {
    central = filt.step(central, tr.measurements[k], u[k]);
    nodes = dkcf_step(net, sys, nodes, {tr.measurements[k]}, u[k], 0.37);
    same = same && same_state(central, nodes[0].grad_cov);
  }
  CHECK(same);
}

TEST_CASE("consensus round is a Jacobi sweep") {
  DiffusionSpec spec;
  spec.grid_n = 8;
  spec.alpha = spec.beta = 0.0025;
  spec.dx = 1.0 / 8;
  const auto sys = build_diffusion(spec);
  const auto net = patch_network(8, 3);
  const Vector x0 = gaussian_bumps_initial(8, {{3, 3, 2, 1.5}});
  const auto tr = simulate(sys, x0, {}, 40, 1, spec.dt);
  const auto meas = simulate_node_measurements(net, tr.states, 2);
  auto serial = fresh_nodes(net.node_count(), 64);
  auto parallel = serial;
  for (int k = 0; k < 40; ++k) {
    serial = dkcf_step(net, sys, serial, meas[k], Vector::Zero(1), 0.2, {}, 1);
    parallel = dkcf_step(net, sys, parallel, meas[k], Vector::Zero(1), 0.2, {}, 3);
  }
  bool same = true;
  for (int j = 0; j < net.node_count(); ++j) same = same && same_state(serial[j].grad_cov, parallel[j].grad_cov);
  CHECK(same);

  // Relabelling nodes permutes the result. Neighbor sums run in label order,
  // so only rounding may differ.
  std::vector<int> perm(static_cast<std::size_t>(net.node_count()));
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::vector<std::pair<int, int>> edges;
  for (const auto& [a, b] : net.graph().edges()) edges.push_back({perm[a], perm[b]});
  std::vector<NodeSensor> sensors(net.sensors().size(), net.sensors()[0]);
  for (int j = 0; j < net.node_count(); ++j) sensors[perm[j]] = net.sensor(j);
  const SensorNetwork relabelled(Graph(net.node_count(), edges), sensors);
  auto a = fresh_nodes(net.node_count(), 64);
  auto b = a;
  for (int k = 0; k < 20; ++k) {
    std::vector<Vector> pm(meas[k].size());
    for (int j = 0; j < net.node_count(); ++j) pm[perm[j]] = meas[k][j];
    a = dkcf_step(net, sys, a, meas[k], Vector::Zero(1), 0.2);
    b = dkcf_step(relabelled, sys, b, pm, Vector::Zero(1), 0.2);
  }
  for (int j = 0; j < net.node_count(); ++j)
    CHECK((a[j].grad_cov.x_hat - b[perm[j]].grad_cov.x_hat).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("symmetric networks keep identical estimates") {
  const auto sys = two_state(0.2);
  const auto I = SelectorOutputMap::identity(2);
  // 4-cycle: vertex-transitive.
  const SensorNetwork net(Graph(4, {{0, 1}, {1, 2}, {2, 3}, {0, 3}}),
                          std::vector<NodeSensor>(4, NodeSensor{I, sys.R()}));
  auto nodes = fresh_nodes(4, 2);
  NormalSource rng(10);
  for (int k = 0; k < 100; ++k) {
    Vector y(2);
    y << rng(), rng();
    nodes = dkcf_step(net, sys, nodes, std::vector<Vector>(4, y), Vector::Zero(1), 0.1);
    for (int j = 1; j < 4; ++j) CHECK(nodes[j].grad_cov.x_hat == nodes[0].grad_cov.x_hat);
  }
  std::vector<Vector> est;
  for (const auto& s : nodes) est.push_back(s.grad_cov.x_hat);
  CHECK(disagreement(est) == 0.0);
}

TEST_CASE("consensus step validates its inputs") {
  const auto sys = two_state(0.2);
  const auto I = SelectorOutputMap::identity(2);
  const SensorNetwork net(Graph(2, {{0, 1}}), std::vector<NodeSensor>(2, NodeSensor{I, sys.R()}));
  auto nodes = fresh_nodes(2, 2);
  const std::vector<Vector> y(2, Vector::Zero(2));
  CHECK_THROWS_AS(dkcf_step(net, sys, nodes, y, Vector::Zero(1), 0.0), ConfigError);
  CHECK_THROWS_AS(dkcf_step(net, sys, fresh_nodes(1, 2), y, Vector::Zero(1), 0.1), ConfigError);
  nodes[1].grad_cov.k = 3;
  CHECK_THROWS_AS(dkcf_step(net, sys, nodes, y, Vector::Zero(1), 0.1), ConfigError);
}

TEST_CASE("node measurements are reproducible and have the sensor variance") {
  const auto net = patch_network(6, 3);
  std::vector<Vector> states(3000, Vector::Constant(36, 2.0));
  const auto a = simulate_node_measurements(net, states, 4);
  const auto b = simulate_node_measurements(net, states, 4);
  REQUIRE(a.size() == 3000);
  REQUIRE(a[0].size() == static_cast<std::size_t>(net.node_count()));
  double sq = 0.0;
  long count = 0;
  bool same = true;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t l = 0; l < a[k].size(); ++l) {
      same = same && a[k][l] == b[k][l];
      sq += (a[k][l].array() - 2.0).square().sum();
      count += a[k][l].size();
    }
  CHECK(same);
  CHECK(sq / static_cast<double>(count) == doctest::Approx(1.0).epsilon(0.05));
}
