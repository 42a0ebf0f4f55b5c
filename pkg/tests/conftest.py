import numpy as np
import pytest

from scalefree.benchmark import EXAMPLE_A, EXAMPLE_B, EXAMPLE_C, data_path
from scalefree.config import load_experiment
from scalefree.lti import LtiSystem
from scalefree.netgraph import WeightedDigraph

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def example_agent():
    return LtiSystem(EXAMPLE_A, EXAMPLE_B, EXAMPLE_C)


@pytest.fixture
def cycle3():
    return WeightedDigraph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)])


@pytest.fixture
def hetero_agents():
    exp = load_experiment(data_path("output_sync.json"))
    return exp.sim.agents


def random_spanning_tree_graph(rng, n, extra_prob=0.3):
    """Random weighted digraph containing a spanning tree rooted at a random node."""
    order = rng.permutation(n)
    edges = {}
    for k in range(1, n):
        parent = order[rng.integers(0, k)]
        edges[(int(parent), int(order[k]))] = float(rng.uniform(0.2, 2.0))
    for i in range(n):
        for j in range(n):
            if i != j and (i, j) not in edges and rng.random() < extra_prob:
                edges[(i, j)] = float(rng.uniform(0.2, 2.0))
    return WeightedDigraph.from_edges(n, [(s, t, w) for (s, t), w in edges.items()])


def random_digraph(rng, n, prob):
    edges = [(i, j, float(rng.uniform(0.2, 2.0))) for i in range(n) for j in range(n)
             if i != j and rng.random() < prob]
    return WeightedDigraph.from_edges(n, edges)


def random_marginal_system(rng, n, m=1, p=1, radius=(0.5, 1.0)):
    """Random (A, B, C) with spectral radius of A drawn from ``radius``."""
    A = rng.standard_normal((n, n))
    A *= rng.uniform(*radius) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    return LtiSystem(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)))
