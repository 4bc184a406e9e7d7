#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gradkf/analysis.hpp"
#include "gradkf/bench.hpp"
#include "gradkf/errors.hpp"
#include "gradkf/filters.hpp"
#include "gradkf/network.hpp"
#include "gradkf/scenario.hpp"

namespace py = pybind11;
using namespace gradkf;

namespace {

// Stack a list of equal-length vectors into a (count, dim) array.
Matrix stack(const std::vector<Vector>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix out(static_cast<Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = rows[i].transpose();
  return out;
}

std::vector<Vector> unstack(const Matrix& m) {
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).transpose());
  return out;
}

py::dict invariants_dict(const InvariantLog& l) {
  py::dict d;
  d["phat_checks"] = l.phat_checks;
  d["phat_violations"] = l.phat_violations;
  d["kf_checks"] = l.kf_checks;
  d["kf_violations"] = l.kf_violations;
  d["max_kf_asymmetry"] = l.max_kf_asymmetry;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gradient-descent diagonal-covariance Kalman filters";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  m.attr("BETA_CLAMP") = kBetaClamp;
  m.attr("MU_MIN") = kMuMin;
  m.attr("MU_MAX") = kMuMax;

  py::class_<SelectorOutputMap>(m, "SelectorOutputMap")
      .def(py::init<Index, std::vector<Index>, Vector>(), py::arg("state_dim"), py::arg("indices"), py::arg("gains"))
      .def_static("identity", &SelectorOutputMap::identity)
      .def_property_readonly("state_dim", &SelectorOutputMap::state_dim)
      .def_property_readonly("output_dim", &SelectorOutputMap::output_dim)
      .def_property_readonly("gains", &SelectorOutputMap::gains)
      .def("apply", &SelectorOutputMap::apply)
      .def("to_dense", &SelectorOutputMap::to_dense);

  py::class_<LinearSystem>(m, "LinearSystem")
      .def(py::init([](const Matrix& A, const Matrix& B, const Matrix& C, const Matrix& Q, const Matrix& R,
                       const Matrix& Upsilon) { return LinearSystem::dense(A, B, C, Q, R, Upsilon); }),
           py::arg("A"), py::arg("B"), py::arg("C"), py::arg("Q"), py::arg("R"), py::arg("Upsilon"))
      .def_property_readonly("A", [](const LinearSystem& s) { return Matrix(s.A()); })
      .def_property_readonly("B", &LinearSystem::B)
      .def_property_readonly("C", [](const LinearSystem& s) { return Matrix(s.C()); })
      .def_property_readonly("Q", &LinearSystem::Q)
      .def_property_readonly("R", &LinearSystem::R)
      .def_property_readonly("n", &LinearSystem::n)
      .def_property_readonly("m", &LinearSystem::m)
      .def_property_readonly("p", &LinearSystem::p);

  m.def(
      "build_diffusion",
      [](int grid_n, double alpha, double beta, double dx, double dt, bool periodic, int taylor_order) {
        return build_diffusion(DiffusionSpec{grid_n, alpha, beta, dx, dt, periodic, taylor_order});
      },
      py::arg("grid_n"), py::arg("alpha") = 1.0, py::arg("beta") = 1.0, py::arg("dx") = 1.0, py::arg("dt") = 0.01,
      py::arg("periodic") = true, py::arg("taylor_order") = 10);

  m.def(
      "simulate",
      [](const LinearSystem& sys, const Vector& x0, int steps, std::uint64_t seed, std::optional<Matrix> inputs,
         double dt) {
        const auto tr = simulate(sys, x0, inputs ? unstack(*inputs) : std::vector<Vector>{}, steps, seed, dt);
        py::dict d;
        d["states"] = stack(tr.states);
        d["measurements"] = stack(tr.measurements);
        d["inputs"] = stack(tr.inputs);
        return d;
      },
      py::arg("system"), py::arg("x0"), py::arg("steps"), py::arg("seed"), py::arg("inputs") = py::none(),
      py::arg("dt") = 1.0,
      "Simulate `steps` transitions. Returns arrays of states (steps + 1 rows), measurements and inputs.");

  py::class_<KalmanState>(m, "KalmanState")
      .def(py::init([](const Vector& x, const Matrix& P) { return KalmanState{x, P, 0, {}}; }), py::arg("x_hat"),
           py::arg("P"))
      .def_readwrite("x_hat", &KalmanState::x_hat)
      .def_readwrite("P", &KalmanState::P)
      .def_readwrite("k", &KalmanState::k)
      .def_readwrite("x_filtered", &KalmanState::x_filtered);
  m.def("kf_step", &kf_step, py::arg("system"), py::arg("state"), py::arg("y"), py::arg("u"));
  m.def("kalman_gain", &kalman_gain, py::arg("system"), py::arg("P"));

  py::enum_<MomentumSchedule>(m, "MomentumSchedule")
      .value("standard", MomentumSchedule::standard)
      .value("shifted", MomentumSchedule::shifted);
  py::enum_<StepBase>(m, "StepBase").value("current", StepBase::current).value("lookahead", StepBase::lookahead);

  py::class_<GradientOptions>(m, "GradientOptions")
      .def(py::init([](bool accelerated, bool adaptive, double fixed_mu, double initial_mu, MomentumSchedule schedule,
                       StepBase base) { return GradientOptions{accelerated, adaptive, fixed_mu, initial_mu, schedule, base}; }),
           py::arg("accelerated") = true, py::arg("adaptive") = true, py::arg("fixed_mu") = kInitialMu,
           py::arg("initial_mu") = kInitialMu, py::arg("schedule") = MomentumSchedule::standard,
           py::arg("base") = StepBase::current)
      .def_readwrite("accelerated", &GradientOptions::accelerated)
      .def_readwrite("adaptive", &GradientOptions::adaptive)
      .def_readwrite("fixed_mu", &GradientOptions::fixed_mu)
      .def_readwrite("initial_mu", &GradientOptions::initial_mu)
      .def_readwrite("schedule", &GradientOptions::schedule)
      .def_readwrite("base", &GradientOptions::base);

  py::class_<GradCovState>(m, "GradCovState")
      .def_readwrite("beta", &GradCovState::beta)
      .def_readwrite("beta_prev", &GradCovState::beta_prev)
      .def_readwrite("alpha_prev", &GradCovState::alpha_prev)
      .def_readwrite("h", &GradCovState::h)
      .def_readwrite("grad_prev", &GradCovState::grad_prev)
      .def_readwrite("mu", &GradCovState::mu)
      .def_readwrite("x_hat", &GradCovState::x_hat)
      .def_readwrite("x_filtered", &GradCovState::x_filtered)
      .def_readwrite("k", &GradCovState::k)
      .def_property_readonly("P_hat", [](const GradCovState& s) { return Vector(covariance_estimate(s).diagonal()); });
  m.def("initial_grad_cov_state", &initial_grad_cov_state, py::arg("x0"), py::arg("P0_diag"),
        py::arg("mu0") = kInitialMu);

  py::class_<GradientKalmanFilter>(m, "GradientKalmanFilter")
      .def(py::init<LinearSystem, GradientOptions>(), py::arg("system"), py::arg("options") = GradientOptions{})
      .def("step", &GradientKalmanFilter::step, py::arg("state"), py::arg("y"), py::arg("u"))
      .def_property_readonly("options", &GradientKalmanFilter::options);
  m.def("gdkf_step", &gdkf_step, py::arg("system"), py::arg("state"), py::arg("y"), py::arg("u"),
        py::arg("options") = GradientOptions{});

  m.def("grad_of_objective", &grad_of_objective, py::arg("delta"), py::arg("C"), py::arg("h"));
  m.def("h_update", &h_update, py::arg("h"), py::arg("kappa"), py::arg("C"), py::arg("delta"));
  m.def("bb_rate", &bb_rate, py::arg("delta_beta"), py::arg("delta_grad"), py::arg("mu_prev"));
  m.def("nesterov_alpha", &nesterov_alpha, py::arg("beta"), py::arg("beta_prev"), py::arg("k"),
        py::arg("schedule") = MomentumSchedule::standard);

  py::class_<StabilityReport>(m, "StabilityReport")
      .def_readonly("rho_A", &StabilityReport::rho_A)
      .def_readonly("rho_closed", &StabilityReport::rho_closed)
      .def_readonly("N_diag", &StabilityReport::N_diag)
      .def_readonly("stable", &StabilityReport::stable);
  m.def("closed_loop_check", &closed_loop_check, py::arg("A"), py::arg("C"), py::arg("R"), py::arg("beta"));
  m.def("spectral_radius", &spectral_radius);
  m.def("disagreement", &disagreement);

  py::class_<Graph>(m, "Graph")
      .def(py::init<int, std::vector<std::pair<int, int>>>(), py::arg("node_count"), py::arg("edges"))
      .def_property_readonly("node_count", &Graph::node_count)
      .def_property_readonly("edges", &Graph::edges)
      .def("neighbors", &Graph::neighbors);
  m.def("load_graph", &load_graph);
  m.def("save_graph", &save_graph);
  m.def(
      "generate_geometric_graph",
      [](int nodes, double radius, std::uint64_t seed) {
        auto g = generate_geometric_graph(nodes, radius, seed);
        return py::make_tuple(g.graph, g.positions);
      },
      py::arg("node_count"), py::arg("radius"), py::arg("seed"), "Returns (graph, positions).");
  m.def("tune_radius_for_edges", &tune_radius_for_edges, py::arg("node_count"), py::arg("target_edges"),
        py::arg("seed"));
  m.def("fastest_mixing_weight", &fastest_mixing_weight);
  m.def("patch_grid_graph", &patch_grid_graph, py::arg("grid_n"), py::arg("patch_side"));

  py::class_<NodeSensor>(m, "NodeSensor")
      .def(py::init<SelectorOutputMap, Vector>(), py::arg("C"), py::arg("R"))
      .def_readonly("C", &NodeSensor::C)
      .def_readonly("R", &NodeSensor::R);
  py::class_<SensorNetwork>(m, "SensorNetwork")
      .def(py::init<Graph, std::vector<NodeSensor>>(), py::arg("graph"), py::arg("sensors"))
      .def_property_readonly("graph", &SensorNetwork::graph)
      .def_property_readonly("node_count", &SensorNetwork::node_count)
      .def("coverage", &SensorNetwork::coverage);
  py::class_<NodeState>(m, "NodeState")
      .def(py::init<int, GradCovState>(), py::arg("node_id"), py::arg("state"))
      .def_readwrite("node_id", &NodeState::node_id)
      .def_readwrite("state", &NodeState::grad_cov);
  m.def("dkcf_step", &dkcf_step, py::arg("network"), py::arg("system"), py::arg("states"), py::arg("measurements"),
        py::arg("u"), py::arg("epsilon"), py::arg("options") = GradientOptions{}, py::arg("threads") = 1);

  py::class_<ScenarioConfig>(m, "ScenarioConfig")
      .def_readonly("name", &ScenarioConfig::name)
      .def_readonly("seeds", &ScenarioConfig::seeds)
      .def_readonly("sweep", &ScenarioConfig::sweep)
      .def_readonly("dt", &ScenarioConfig::dt)
      .def_property_readonly("steps", &ScenarioConfig::steps);
  m.def("load_scenario", &load_scenario, py::arg("path"), py::arg("full_scale") = false);
  m.def("parse_scenario", &parse_scenario, py::arg("text"), py::arg("full_scale") = false);
  m.def(
      "run_scenario",
      [](const ScenarioConfig& cfg, std::optional<std::string> output_dir, std::optional<std::uint64_t> seed,
         int threads) {
        RunOptions opts;
        opts.output_dir = output_dir;
        opts.write_files = output_dir.has_value();
        opts.seed_override = seed;
        opts.threads = threads;
        ScenarioResult res;
        {
          py::gil_scoped_release release;
          res = run_scenario(cfg, opts);
        }
        py::dict d;
        d["files"] = res.files;
        if (const auto* s = std::get_if<SweepResult>(&res.result)) {
          d["kind"] = "sweep";
          d["series"] = s->series;
          d["alphas"] = s->alphas;
          d["seeds"] = s->seeds;
          d["error"] = s->error;
          py::dict medians;
          for (std::size_t i = 0; i < s->series.size(); ++i) {
            std::vector<double> row;
            for (std::size_t a = 0; a < s->alphas.size(); ++a) row.push_back(s->median(i, a));
            medians[py::str(s->series[i])] = row;
          }
          d["median"] = medians;
          d["invariants"] = invariants_dict(s->invariants);
        } else {
          const auto& n = std::get<NetworkRunResult>(res.result);
          d["kind"] = "network";
          d["seeds"] = n.seeds;
          d["node_mse"] = n.node_mse;
          d["aggregate_mse"] = n.aggregate_mse;
          d["disagreement"] = n.disagreement;
          d["node_count"] = n.node_count;
          d["edge_count"] = n.edge_count;
          d["invariants"] = invariants_dict(n.invariants);
        }
        return d;
      },
      py::arg("config"), py::arg("output_dir") = py::none(), py::arg("seed") = py::none(), py::arg("threads") = 1,
      "Run a scenario. Files are written only when output_dir is given.");

  py::class_<BenchResult>(m, "BenchResult")
      .def_readonly("dims", &BenchResult::dims)
      .def_readonly("standard_seconds", &BenchResult::standard_seconds)
      .def_readonly("gradient_seconds", &BenchResult::gradient_seconds)
      .def_readonly("standard_exponent", &BenchResult::standard_exponent)
      .def_readonly("gradient_exponent", &BenchResult::gradient_exponent)
      .def("csv", &BenchResult::csv);
  m.def("bench_step_cost", &bench_step_cost, py::arg("dims"), py::arg("trials") = 3,
        py::call_guard<py::gil_scoped_release>());
}
