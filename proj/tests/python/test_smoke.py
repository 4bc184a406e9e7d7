import os
from pathlib import Path

import numpy as np
import pytest

import gradkf

SCENARIOS = Path(os.environ.get("GRADKF_SCENARIOS", Path(__file__).resolve().parents[2] / "scenarios"))


def two_state(r=0.115):
    A = np.array([[1.001, 0.011], [-0.0301, 0.98]])
    B = np.array([[5e-5], [1e-2]])
    I = np.eye(2)
    return gradkf.LinearSystem(A, B, I, 0.001 * I, r * I, I)


def test_simulate_shapes_and_determinism():
    sys = two_state()
    a = gradkf.simulate(sys, np.array([1.0, 0.0]), 50, seed=3)
    b = gradkf.simulate(sys, np.array([1.0, 0.0]), 50, seed=3)
    assert a["states"].shape == (51, 2)
    assert a["measurements"].shape == (50, 2)
    np.testing.assert_array_equal(a["measurements"], b["measurements"])


def test_filters_track_the_plant():
    sys = two_state()
    tr = gradkf.simulate(sys, np.array([1.0, 0.0]), 400, seed=1, dt=0.01)
    opts = gradkf.GradientOptions(adaptive=False, fixed_mu=0.3 / 0.115)
    filt = gradkf.GradientKalmanFilter(sys, opts)
    st = gradkf.initial_grad_cov_state(np.zeros(2), np.ones(2))
    ks = gradkf.KalmanState(np.zeros(2), np.eye(2))
    u = np.zeros(1)
    g_err = k_err = raw = 0.0
    for k in range(400):
        y = tr["measurements"][k]
        st = filt.step(st, y, u)
        ks = gradkf.kf_step(sys, ks, y, u)
        if k >= 200:
            truth = tr["states"][k]
            g_err += np.linalg.norm(st.x_filtered - truth)
            k_err += np.linalg.norm(ks.x_filtered - truth)
            raw += np.linalg.norm(y - truth)
    assert g_err < raw
    assert k_err < raw
    assert np.all(st.P_hat > 0)


def test_free_step_matches_class_step():
    sys = two_state()
    st = gradkf.initial_grad_cov_state(np.zeros(2), np.ones(2))
    y, u = np.array([0.3, -0.2]), np.zeros(1)
    a = gradkf.gdkf_step(sys, st, y, u)
    b = gradkf.GradientKalmanFilter(sys).step(st, y, u)
    np.testing.assert_array_equal(a.x_hat, b.x_hat)
    np.testing.assert_array_equal(a.beta, b.beta)


def test_single_node_network_equals_centralized_filter():
    sys = two_state()
    C = gradkf.SelectorOutputMap.identity(2)
    net = gradkf.SensorNetwork(gradkf.Graph(1, []), [gradkf.NodeSensor(C, sys.R)])
    st = gradkf.initial_grad_cov_state(np.zeros(2), np.ones(2))
    nodes = [gradkf.NodeState(0, st)]
    tr = gradkf.simulate(sys, np.array([1.0, 0.0]), 30, seed=5)
    filt = gradkf.GradientKalmanFilter(sys)
    for y in tr["measurements"]:
        st = filt.step(st, y, np.zeros(1))
        nodes = gradkf.dkcf_step(net, sys, nodes, [y], np.zeros(1), 0.01)
    np.testing.assert_array_equal(nodes[0].state.x_hat, st.x_hat)


def test_primitives():
    C = gradkf.SelectorOutputMap(3, [0, 2], np.array([1.0, 2.0]))
    g = gradkf.grad_of_objective(np.array([1.0, 1.0]), C, np.array([1.0, 5.0, 3.0]))
    np.testing.assert_allclose(g, [-2.0, 0.0, -12.0])
    assert gradkf.bb_rate(np.array([1.0]), np.array([1.0]), 0.5) == pytest.approx(2.0)
    rep = gradkf.closed_loop_check(np.diag([0.5, 0.4]), gradkf.SelectorOutputMap.identity(2), np.ones(2), np.zeros(2))
    assert rep.stable and rep.rho_closed == pytest.approx(0.25)


def test_graph_helpers():
    g = gradkf.patch_grid_graph(10, 4)
    assert g.node_count == 9 and len(g.edges) == 12
    assert gradkf.fastest_mixing_weight(gradkf.Graph(2, [(0, 1)])) == pytest.approx(0.5)
    graph, pos = gradkf.generate_geometric_graph(20, 0.3, 1)
    assert graph.node_count == 20 and len(pos) == 20


def test_errors_map_to_python_exceptions():
    with pytest.raises(gradkf.ConfigError):
        gradkf.Graph(2, [(0, 0)])
    with pytest.raises(gradkf.ConfigError):
        gradkf.parse_scenario("{ not json")


def test_run_scenario_in_memory_and_on_disk(tmp_path):
    cfg = gradkf.load_scenario(str(SCENARIOS / "two_state.json"))
    res = gradkf.run_scenario(cfg, seed=2)
    assert res["kind"] == "sweep" and res["files"] == []
    assert res["seeds"] == [2]
    acc = res["median"]["accelerated"]
    assert len(acc) == len(res["alphas"])
    assert res["invariants"]["phat_violations"] == 0

    out = tmp_path / "run"
    res = gradkf.run_scenario(cfg, output_dir=str(out), seed=2)
    assert (out / "summary.json").exists()
    assert len(res["files"]) > 0


def test_network_scenario_runs():
    cfg = gradkf.load_scenario(str(SCENARIOS / "diffusion.json"))
    res = gradkf.run_scenario(cfg, seed=4)
    assert res["kind"] == "network"
    assert res["node_mse"][0] < res["aggregate_mse"][0]


def test_bench():
    res = gradkf.bench_step_cost([16, 32], 1)
    assert res.dims == [16, 32]
    assert res.csv().startswith("kind,n,filter,value")
