import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_digraph, random_spanning_tree_graph
from scalefree import _numerics as nm
from scalefree.errors import GraphError
from scalefree.netgraph import (WeightedDigraph, dump_graph, graph_from_dict, has_spanning_tree,
                                is_rooted_at, laplacian, load_graph, reduced_matrix,
                                rooted_networks, row_stochastic, spectral_radius_in_unit_disk)


def bidirectional_pair():
    return WeightedDigraph.from_edges(2, [(0, 1, 1.0), (1, 0, 1.0)])


class TestLaplacian:
    def test_single_node(self):
        assert np.array_equal(laplacian(WeightedDigraph(np.zeros((1, 1)))), [[0.0]])

    def test_pair(self):
        assert np.array_equal(laplacian(bidirectional_pair()), [[1, -1], [-1, 1]])

    def test_cycle(self, cycle3):
        assert np.array_equal(laplacian(cycle3), [[1, 0, -1], [-1, 1, 0], [0, -1, 1]])

    def test_rows_sum_to_zero_exactly(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            L = laplacian(random_digraph(rng, 6, 0.5))
            assert np.all(L.sum(axis=1) == 0.0) or np.max(np.abs(L.sum(axis=1))) < 1e-15


class TestRowStochastic:
    def test_single_node(self):
        assert np.array_equal(row_stochastic(WeightedDigraph(np.zeros((1, 1)))).D, [[1.0]])

    def test_pair(self):
        assert np.allclose(row_stochastic(bidirectional_pair()).D, [[0.5, 0.5], [0.5, 0.5]],
                           rtol=0, atol=0)

    def test_cycle(self, cycle3):
        want = [[0.5, 0, 0.5], [0.5, 0.5, 0], [0, 0.5, 0.5]]
        assert np.array_equal(row_stochastic(cycle3).D, want)

    def test_weighted_entries(self):
        g = WeightedDigraph.from_edges(3, [(1, 0, 2.0), (2, 0, 1.0)])
        D = row_stochastic(g).D
        assert D[0, 1] == 2.0 / 4.0 and D[0, 2] == 1.0 / 4.0 and D[0, 0] == 0.25
        assert np.array_equal(D[1:], np.eye(3)[1:])


class TestReducedMatrix:
    def test_pair(self):
        assert np.array_equal(reduced_matrix([[0.5, 0.5], [0.5, 0.5]]), [[0.0]])

    def test_identity(self):
        assert np.array_equal(reduced_matrix(np.eye(2)), [[1.0]])

    def test_cycle_spectrum(self, cycle3):
        Dt = row_stochastic(cycle3).Dtilde
        assert np.array_equal(Dt, [[0.5, -0.5], [0.5, 0.0]])
        lam = nm.eigenvalues(Dt)
        want = [0.25 - 0.25 * math.sqrt(3) * 1j, 0.25 + 0.25 * math.sqrt(3) * 1j]
        assert nm.match_spectra(lam, want) < 1e-12

    def test_rejects_single_node(self):
        with pytest.raises(GraphError):
            reduced_matrix([[1.0]])


class TestConnectivity:
    def test_cycle(self, cycle3):
        assert has_spanning_tree(cycle3)

    def test_isolated(self):
        assert not has_spanning_tree(WeightedDigraph(np.zeros((2, 2))))

    def test_star(self):
        g = WeightedDigraph.from_edges(4, [(0, 1, 1), (0, 2, 1), (0, 3, 1)])
        assert has_spanning_tree(g)

    def test_two_roots_needed(self):
        g = WeightedDigraph.from_edges(3, [(0, 2, 1), (1, 2, 1)])
        assert not has_spanning_tree(g)
        assert is_rooted_at(g, {0, 1})
        assert not is_rooted_at(g, {0})


class TestRootedNetworks:
    def test_single_node(self):
        r = rooted_networks(WeightedDigraph(np.zeros((1, 1))), {0})
        assert np.array_equal(r.Lbar, [[1.0]]) and np.array_equal(r.Dbar, [[0.5]])
        assert r.rooted

    def test_pair(self):
        r = rooted_networks(bidirectional_pair(), {0})
        assert np.array_equal(r.Lbar, [[2, -1], [-1, 1]])
        assert np.allclose(r.Dbar, [[1 / 3, 1 / 3], [1 / 3, 2 / 3]], rtol=0, atol=1e-15)
        # eigenvalues (1 +- sqrt(5)/3) / 2 from the 2x2 characteristic polynomial
        assert abs(nm.spectral_radius(r.Dbar) - (1 + math.sqrt(5) / 3) / 2) < 1e-14
        assert spectral_radius_in_unit_disk(r.Dbar)

    def test_unreachable(self):
        assert not rooted_networks(WeightedDigraph(np.zeros((2, 2))), {0}).rooted

    def test_empty_rootset(self):
        with pytest.raises(GraphError):
            rooted_networks(bidirectional_pair(), set())

    def test_entries_nonnegative_rows_at_most_one(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            g = random_digraph(rng, 5, 0.4)
            r = rooted_networks(g, {int(rng.integers(5))})
            assert np.all(r.Dbar >= 0)
            assert np.all(r.Dbar.sum(axis=1) <= 1 + 1e-15)


class TestUnitDisk:
    def test_zero(self):
        assert spectral_radius_in_unit_disk(np.zeros((3, 3)))

    def test_rotation(self):
        assert not spectral_radius_in_unit_disk([[0, 1], [-1, 0]])


class TestValidation:
    @pytest.mark.parametrize("edges", [[(0, 0, 1.0)], [(0, 1, 0.0)], [(0, 1, -1.0)],
                                       [(0, 5, 1.0)], [(0, 1, 1.0), (0, 1, 2.0)]])
    def test_bad_edges(self, edges):
        with pytest.raises(GraphError):
            WeightedDigraph.from_edges(3, edges)

    def test_negative_weight_matrix(self):
        with pytest.raises(GraphError):
            WeightedDigraph([[0, -1], [0, 0]])

    def test_file_roundtrip(self, tmp_path, cycle3):
        g = WeightedDigraph.from_edges(3, [(0, 1, 0.1), (1, 2, 1 / 3)], rootset={0})
        path = tmp_path / "g.json"
        dump_graph(g, path)
        back = load_graph(path)
        assert np.array_equal(back.weights, g.weights) and back.rootset == g.rootset

    def test_unknown_keys(self):
        with pytest.raises(GraphError):
            graph_from_dict({"n": 2, "edges": [], "colour": "red"})
        with pytest.raises(GraphError):
            graph_from_dict({"n": 2, "edges": [{"from": 1, "to": 2, "weight": 1, "x": 0}]})

    def test_one_based_indices(self):
        g = graph_from_dict(json.loads('{"n": 2, "edges": [{"from": 1, "to": 2, "weight": "0.5"}]}'))
        assert g.weights[1, 0] == 0.5
        with pytest.raises(GraphError):
            graph_from_dict({"n": 2, "edges": [{"from": 0, "to": 1, "weight": 1}]})


# -- properties -------------------------------------------------------------

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=60, deadline=None)
@given(seed=seeds, n=st.integers(2, 8))
def test_laplacian_row_stochastic_identity(seed, n):
    g = random_digraph(np.random.default_rng(seed), n, 0.4)
    nets = row_stochastic(g)
    lhs = np.linalg.solve(np.eye(n) + nets.Din, nets.L)
    assert np.max(np.abs(lhs - (np.eye(n) - nets.D))) < 1e-12


@settings(max_examples=60, deadline=None)
@given(seed=seeds, n=st.integers(2, 8))
def test_reduced_spectrum_drops_one_unit_eigenvalue(seed, n):
    g = random_spanning_tree_graph(np.random.default_rng(seed), n)
    nets = row_stochastic(g)
    lam = list(nm.eigenvalues(nets.D))
    lam.pop(int(np.argmin(np.abs(np.array(lam) - 1.0))))
    assert nm.match_spectra(nm.eigenvalues(nets.Dtilde), lam) < 1e-8


@settings(max_examples=60, deadline=None)
@given(seed=seeds, n=st.integers(2, 8))
def test_spanning_tree_gives_simple_unit_eigenvalue(seed, n):
    g = random_spanning_tree_graph(np.random.default_rng(seed), n)
    lam = nm.eigenvalues(row_stochastic(g).D)
    near_one = np.abs(lam - 1.0) < 1e-9
    assert near_one.sum() == 1
    assert np.all(np.abs(lam[~near_one]) < 1.0)


@settings(max_examples=80, deadline=None)
@given(seed=seeds, n=st.integers(1, 6), prob=st.floats(0.0, 0.6))
def test_rooted_spectral_equivalence(seed, n, prob):
    rng = np.random.default_rng(seed)
    g = random_digraph(rng, n, prob)
    roots = {int(r) for r in rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)}
    r = rooted_networks(g, roots)
    assert spectral_radius_in_unit_disk(r.Dbar) == r.rooted


@settings(max_examples=30, deadline=None)
@given(seed=seeds, n=st.integers(2, 7))
def test_relabeling_preserves_spectrum(seed, n):
    rng = np.random.default_rng(seed)
    g = random_digraph(rng, n, 0.5)
    perm = rng.permutation(n)
    a = nm.eigenvalues(row_stochastic(g).D)
    b = nm.eigenvalues(row_stochastic(g.permuted(perm)).D)
    assert nm.match_spectra(a, b) < 1e-10
