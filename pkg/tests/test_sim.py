import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalefree.benchmark import printed_spec
from scalefree.errors import ConfigError, DimensionError, DivergedError, StructuralError, SynthesisError
from scalefree.lti import LtiSystem
from scalefree.netgraph import WeightedDigraph, rooted_networks, row_stochastic
from scalefree.protocols import ProtocolSpec
from scalefree.sim import (SimConfig, Trace, decay_rate, export_run, initial_conditions, metrics,
                           network_signals, regulated_signals, run, write_trace_csv)
from scalefree.synthesis import design_gains, design_state_gain

from conftest import random_spanning_tree_graph


@pytest.fixture
def p2_spec(example_agent):
    return ProtocolSpec.partial_state(design_gains(example_agent))


def p2_config(graph, agent, spec, horizon=50, **kw):
    return SimConfig(graph=graph, agents=(agent,) * graph.n, protocol=spec, horizon=horizon, **kw)


# -- network signals ---------------------------------------------------------

def test_network_signals_two_nodes():
    z = network_signals(np.array([[1.0], [0.0]]), np.array([[0.5, 0.5], [0.5, 0.5]]))
    assert z[:, 0] == pytest.approx([0.5, -0.5], abs=1e-15)


def test_network_signals_single_node_and_consensus():
    assert np.all(network_signals(np.array([[3.0, -1.0]]), np.array([[1.0]])) == 0)
    D = row_stochastic(WeightedDigraph.from_edges(3, [(0, 1, 1.0), (1, 2, 2.0), (2, 0, 1.0)])).D
    v = np.tile([0.3, -2.0], (3, 1))
    assert np.allclose(network_signals(v, D), 0.0, atol=1e-15)


def test_network_signals_dimension_error():
    with pytest.raises(DimensionError):
        network_signals(np.zeros((3, 2)), np.eye(2))


def test_regulated_signals_single_node():
    g = WeightedDigraph.from_edges(1, [])
    rooted = rooted_networks(g, {0})
    assert rooted.Dbar[0, 0] == pytest.approx(0.5)
    zbar, zcheck = regulated_signals(np.array([[2.0]]), np.array([0.0]), np.zeros((1, 1)), rooted)
    assert zbar[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert zcheck[0, 0] == 0.0


def test_regulated_signals_vanish_on_reference(cycle3):
    rooted = rooted_networks(cycle3, {0})
    y = np.full((3, 1), 0.7)
    zbar, zcheck = regulated_signals(y, [0.7], np.zeros((3, 4)), rooted)
    assert np.all(zbar == 0) and np.all(zcheck == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_signal_forms_agree_on_random_inputs(seed, n):
    rng = np.random.default_rng(seed)
    g = random_spanning_tree_graph(rng, n)
    roots = {int(rng.integers(n))}
    rooted = rooted_networks(g, roots)
    y, rho = rng.standard_normal((n, 2)), rng.standard_normal((n, 3))
    regulated_signals(y, rng.standard_normal(2), rho, rooted, check=True)
    network_signals(rho, row_stochastic(g).D, check=True)


# -- run ---------------------------------------------------------------------

def test_single_agent_full_state_disagreement_zero():
    A, B = np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([[0.0], [1.0]])
    spec = ProtocolSpec.full_state(A, B, design_state_gain(A, B))
    cfg = SimConfig(WeightedDigraph.from_edges(1, []), (LtiSystem(A, B, np.eye(2)),), spec, 40)
    tr = run(cfg)
    assert np.all(tr.disagreement == 0)
    assert tr.horizon == 40 and tr.disagreement.shape == (41,)


def test_equal_initial_conditions_give_exact_zero(example_agent, p2_spec):
    g = random_spanning_tree_graph(np.random.default_rng(2), 5)
    x0 = (np.array([0.3, -0.8, 0.1]),) * 5
    tr = run(p2_config(g, example_agent, p2_spec, 200, x0=x0))
    assert np.all(tr.disagreement == 0.0)


def test_cycle_disagreement_decays(example_agent, p2_spec, cycle3):
    tr = run(p2_config(cycle3, example_agent, p2_spec, 300))
    assert tr.disagreement[-1] < 1e-6 * tr.disagreement[0]
    assert np.all(tr.disagreement >= 0)


def test_permutation_equivariance(example_agent, p2_spec):
    rng = np.random.default_rng(5)
    g = random_spanning_tree_graph(rng, 4)
    x0 = tuple(rng.uniform(-1, 1, 3) for _ in range(4))
    perm = np.array([2, 0, 3, 1])
    a = run(p2_config(g, example_agent, p2_spec, 60, x0=x0))
    b = run(p2_config(g.permuted(perm), example_agent, p2_spec, 60, x0=tuple(x0[p] for p in perm)))
    for new, old in enumerate(perm):
        assert np.allclose(b.x[new], a.x[old], atol=1e-12)
        assert np.allclose(b.eta[:, new], a.eta[:, old], atol=1e-12)
    assert np.allclose(a.disagreement, b.disagreement, atol=1e-12)


def test_run_is_bit_deterministic(example_agent, p2_spec, cycle3):
    a = run(p2_config(cycle3, example_agent, p2_spec, 80, seed=9))
    b = run(p2_config(cycle3, example_agent, p2_spec, 80, seed=9))
    c = run(p2_config(cycle3, example_agent, p2_spec, 80, seed=10))
    assert all(np.array_equal(p, q) for p, q in zip(a.x, b.x))
    assert np.array_equal(a.u, b.u) and np.array_equal(a.disagreement, b.disagreement)
    assert not np.array_equal(a.x[0], c.x[0])


def test_initial_conditions_are_pcg64_uniform(example_agent, p2_spec, cycle3):
    x0, xr0 = initial_conditions(p2_config(cycle3, example_agent, p2_spec, seed=4))
    rng = np.random.Generator(np.random.PCG64(4))
    for v in x0:
        assert np.array_equal(v, rng.uniform(-1.0, 1.0, 3))
    assert xr0 is None


def test_structural_refusal_and_override(example_agent, p2_spec):
    g = WeightedDigraph.from_edges(3, [(0, 1, 1.0)])
    with pytest.raises(StructuralError, match="spanning tree"):
        run(p2_config(g, example_agent, p2_spec))
    tr = run(p2_config(g, example_agent, p2_spec, 20, allow_unverified=True))
    assert tr.horizon == 20


def test_uncertified_gains_need_override_and_diverge(example_agent, cycle3):
    spec = printed_spec()
    with pytest.raises(SynthesisError, match="not Schur-certified"):
        p2_config(cycle3, example_agent, spec, 500)
    with pytest.raises(DivergedError, match="at step"):
        run(p2_config(cycle3, example_agent, spec, 500, allow_unverified=True))


def test_divergence_guard():
    A, B = np.array([[2.0]]), np.array([[1.0]])
    spec = ProtocolSpec.full_state(A, B, [[1.5]])
    g = WeightedDigraph.from_edges(2, [(0, 1, 1.0)])
    cfg = SimConfig(g, (LtiSystem(A, B, [[1.0]]),) * 2, spec, 100, x0=([1.0], [-1.0]))
    with pytest.raises(DivergedError):
        run(cfg)


def test_config_validation(example_agent, p2_spec, cycle3):
    with pytest.raises(ConfigError, match="horizon"):
        p2_config(cycle3, example_agent, p2_spec, -1)
    with pytest.raises(ConfigError, match="rootset"):
        p2_config(cycle3, example_agent, p2_spec, rootset={0})
    with pytest.raises(ConfigError, match="x0"):
        p2_config(cycle3, example_agent, p2_spec, x0=(np.zeros(3),) * 2)
    other = LtiSystem(np.eye(3) * 0.5, example_agent.B, example_agent.C)
    with pytest.raises(ConfigError, match="differs"):
        SimConfig(cycle3, (example_agent, other, example_agent), p2_spec, 10)


# -- metrics -----------------------------------------------------------------

def test_decay_rate_geometric():
    assert decay_rate(2.0 ** -np.arange(60)) == pytest.approx(math.log(0.5), abs=1e-6)


def test_decay_rate_zero_and_floor():
    assert decay_rate(np.zeros(10)) == 0.0
    assert decay_rate([1.0, 0.0, 0.0, 0.0]) == -math.inf
    s = np.r_[0.5 ** np.arange(30), np.full(30, 1e-300)]
    assert decay_rate(s) == pytest.approx(math.log(0.5), abs=1e-6)


def _trace_from_disagreement(d):
    d = np.asarray(d, dtype=float)
    k = d.size
    z = np.zeros((k, 1, 1))
    return Trace(kind=None, x=(np.zeros((k, 1)),), y=z, u=z, zeta=z, zeta_hat=z, eta=z,
                 xhat=None, xi=(np.zeros((k, 0)),), xr=None, yr=None, disagreement=d,
                 regulation_error=None)


def test_metrics_constant_zero():
    s = metrics(_trace_from_disagreement(np.zeros(20)))
    assert s.settled_step == 0 and s.decay_rate == 0.0 and s.final_disagreement == 0.0


def test_metrics_settled_step():
    s = metrics(_trace_from_disagreement(10.0 ** -np.arange(10)), tol=1e-3)
    assert s.settled_step == 4
    assert s.decay_rate == pytest.approx(math.log(0.1), abs=1e-9)


# -- export ------------------------------------------------------------------

def test_horizon_zero_csv(tmp_path, example_agent, p2_spec, cycle3):
    tr = run(p2_config(cycle3, example_agent, p2_spec, 0))
    write_trace_csv(tr, tmp_path / "t.csv")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0].startswith("k,agent,state_index,x,y,u,zeta,zeta_hat,eta")
    assert len(rows) == 1 + 3 * 3
    assert all(r.startswith("0,") for r in rows[1:])


def test_csv_round_trips_at_17_digits(tmp_path, example_agent, p2_spec, cycle3):
    tr = run(p2_config(cycle3, example_agent, p2_spec, 5))
    write_trace_csv(tr, tmp_path / "t.csv")
    data = np.genfromtxt(tmp_path / "t.csv", delimiter=",", skip_header=1)
    for row in data:
        k, i, s = int(row[0]), int(row[1]) - 1, int(row[2]) - 1
        assert row[3] == tr.x[i][k, s]
        assert row[8] == tr.eta[k, i, s]


def test_export_run_files(tmp_path, example_agent, p2_spec, cycle3):
    summary = export_run(run(p2_config(cycle3, example_agent, p2_spec, 100)), tmp_path, title="c3")
    for name in ("trace.csv", "metrics.csv", "summary.json", "plot.gp"):
        assert (tmp_path / name).exists()
    assert summary.decay_rate < 0
    assert "states_agent3.png" in (tmp_path / "plot.gp").read_text()
