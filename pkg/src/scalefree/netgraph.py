"""Weighted directed communication graphs and the matrices derived from them.

Convention: ``weights[i, j] = a_ij`` is the weight of the edge *from* node
``j`` *to* node ``i``; node ``i`` receives information from ``j``. Indices
are 0-based in Python and 1-based in graph files.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _numerics as nm
from .errors import GraphError

__all__ = [
    "WeightedDigraph",
    "NetworkMatrices",
    "RootedNetworkMatrices",
    "laplacian",
    "row_stochastic",
    "reduced_matrix",
    "has_spanning_tree",
    "reachable_from",
    "is_rooted_at",
    "rooted_networks",
    "spectral_radius_in_unit_disk",
    "load_graph",
    "dump_graph",
]


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WeightedDigraph:
    """Directed graph on ``n`` nodes with nonnegative weights ``a_ij``."""

    weights: np.ndarray
    rootset: frozenset = field(default=frozenset())

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, ndmin=2)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] == 0:
            raise GraphError(f"weights must be a non-empty square matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise GraphError("weights must be finite")
        if np.any(w < 0):
            raise GraphError("weights must be nonnegative")
        if np.any(np.diag(w) != 0):
            raise GraphError("self-loops are not allowed (a_ii must be 0)")
        roots = frozenset(int(r) for r in self.rootset)
        if any(r < 0 or r >= w.shape[0] for r in roots):
            raise GraphError(f"rootset {sorted(roots)} outside node range 0..{w.shape[0] - 1}")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "rootset", roots)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_edges(cls, n, edges, rootset=()):
        """Build from ``(source, target, weight)`` triples with 0-based nodes."""
        if n < 1:
            raise GraphError("a graph needs at least one node")
        w = np.zeros((n, n))
        for src, dst, weight in edges:
            src, dst = int(src), int(dst)
            if not (0 <= src < n and 0 <= dst < n):
                raise GraphError(f"edge {src}->{dst} outside node range 0..{n - 1}")
            if src == dst:
                raise GraphError(f"self-loop at node {src} rejected")
            if not weight > 0:
                raise GraphError(f"edge {src}->{dst} must have positive weight, got {weight}")
            if w[dst, src] != 0:
                raise GraphError(f"duplicate edge {src}->{dst}")
            w[dst, src] = float(weight)
        return cls(w, frozenset(rootset))

    def edges(self):
        """Edges as ``(source, target, weight)`` in row-major order of ``a``."""
        return [(j, i, float(self.weights[i, j]))
                for i in range(self.n) for j in range(self.n) if self.weights[i, j] != 0]

    @property
    def in_degree(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def permuted(self, perm):
        """Relabel nodes: new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm, dtype=int)
        w = self.weights[np.ix_(perm, perm)]
        inverse = {int(old): new for new, old in enumerate(perm)}
        return WeightedDigraph(w, frozenset(inverse[r] for r in self.rootset))


@dataclass(frozen=True)
class NetworkMatrices:
    L: np.ndarray
    Din: np.ndarray
    D: np.ndarray
    Dtilde: np.ndarray | None


@dataclass(frozen=True)
class RootedNetworkMatrices:
    rootset: frozenset
    Lbar: np.ndarray
    Dbar: np.ndarray
    Din: np.ndarray
    rooted: bool


def laplacian(g: WeightedDigraph) -> np.ndarray:
    """Graph Laplacian: ``l_ii = sum_k a_ik``, ``l_ij = -a_ij``."""
    L = -g.weights.copy()
    # diagonal of weights is zero, so the row sum is exactly the in-degree
    L[np.diag_indices(g.n)] = g.weights.sum(axis=1)
    return _frozen(L)


def row_stochastic(g: WeightedDigraph) -> NetworkMatrices:
    """Row-stochastic weight matrix ``D = I - (I + Din)^-1 L`` and friends.

    Off-diagonal entries are ``a_ij / (1 + d_in(i))``; the diagonal is set
    to ``1 - sum_{j != i} d_ij`` so rows sum to one.
    """
    din = g.in_degree
    D = g.weights / (1.0 + din)[:, None]
    D[np.diag_indices(g.n)] = 1.0 - D.sum(axis=1)
    Dtilde = reduced_matrix(D) if g.n >= 2 else None
    return NetworkMatrices(L=laplacian(g), Din=_frozen(np.diag(din)), D=_frozen(D),
                           Dtilde=None if Dtilde is None else _frozen(Dtilde))


def reduced_matrix(D) -> np.ndarray:
    """``Dtilde_ij = d_ij - d_Nj`` for ``i, j < N`` (last agent subtracted)."""
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise GraphError(f"D must be square, got shape {D.shape}")
    if D.shape[0] < 2:
        raise GraphError("reduction needs at least two agents")
    return D[:-1, :-1] - D[-1, :-1][None, :]


def reachable_from(g: WeightedDigraph, sources) -> set:
    """Nodes reachable from ``sources`` along directed edges (BFS)."""
    seen = set(int(s) for s in sources)
    queue = deque(seen)
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(g.weights[:, j]):
            i = int(i)
            if i not in seen:
                seen.add(i)
                queue.append(i)
    return seen


def has_spanning_tree(g: WeightedDigraph) -> bool:
    """True iff some node reaches every node."""
    return any(len(reachable_from(g, [root])) == g.n for root in range(g.n))


def is_rooted_at(g: WeightedDigraph, rootset) -> bool:
    """Every node is reachable from some node of ``rootset``."""
    return len(reachable_from(g, rootset)) == g.n


def rooted_networks(g: WeightedDigraph, rootset=None) -> RootedNetworkMatrices:
    """Expanded Laplacian ``Lbar = L + diag(iota)`` and ``Dbar = I - (2I + Din)^-1 Lbar``."""
    roots = frozenset(int(r) for r in (g.rootset if rootset is None else rootset))
    if not roots:
        raise GraphError("rootset must be nonempty")
    if any(r < 0 or r >= g.n for r in roots):
        raise GraphError(f"rootset {sorted(roots)} outside node range 0..{g.n - 1}")
    iota = np.zeros(g.n)
    iota[sorted(roots)] = 1.0
    din = g.in_degree
    Lbar = np.array(laplacian(g)) + np.diag(iota)
    Dbar = np.eye(g.n) - Lbar / (2.0 + din)[:, None]
    return RootedNetworkMatrices(rootset=roots, Lbar=_frozen(Lbar), Dbar=_frozen(Dbar),
                                 Din=_frozen(np.diag(din)), rooted=is_rooted_at(g, roots))


def spectral_radius_in_unit_disk(M, tol=nm.UNIT_DISK_TOL) -> bool:
    """``max |lambda(M)| < 1 - tol``; eigen-solver failure raises, never returns False."""
    return nm.in_unit_disk(M, tol)


# -- file format -------------------------------------------------------------

_GRAPH_KEYS = {"n", "edges", "rootset"}
_EDGE_KEYS = {"from", "to", "weight"}


def graph_from_dict(obj) -> WeightedDigraph:
    """Parse ``{"n", "edges": [{"from", "to", "weight"}], "rootset"?}`` (1-based)."""
    if not isinstance(obj, dict):
        raise GraphError("graph must be a JSON object")
    unknown = set(obj) - _GRAPH_KEYS
    if unknown:
        raise GraphError(f"unknown graph keys: {sorted(unknown)}")
    if "n" not in obj or "edges" not in obj:
        raise GraphError("graph needs 'n' and 'edges'")
    n = obj["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise GraphError(f"'n' must be a positive integer, got {n!r}")
    edges = []
    for e in obj["edges"]:
        if not isinstance(e, dict) or set(e) != _EDGE_KEYS:
            raise GraphError(f"edge must have exactly keys {sorted(_EDGE_KEYS)}: {e!r}")
        try:
            weight = nm.parse_decimal(e["weight"])
        except ValueError as exc:
            raise GraphError(str(exc)) from exc
        edges.append((_node(e["from"], n), _node(e["to"], n), weight))
    roots = [_node(r, n) for r in obj.get("rootset", [])]
    if len(set(roots)) != len(roots):
        raise GraphError("rootset has duplicates")
    return WeightedDigraph.from_edges(n, edges, roots)


def _node(value, n):
    if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= n:
        raise GraphError(f"node index {value!r} must be an integer in 1..{n}")
    return value - 1


def graph_to_dict(g: WeightedDigraph) -> dict:
    out = {"n": g.n,
           "edges": [{"from": j + 1, "to": i + 1, "weight": nm.format_decimal(w)}
                     for j, i, w in g.edges()]}
    if g.rootset:
        out["rootset"] = [r + 1 for r in sorted(g.rootset)]
    return out


def load_graph(path) -> WeightedDigraph:
    return graph_from_dict(json.loads(Path(path).read_text()))


def dump_graph(g: WeightedDigraph, path=None) -> str:
    text = json.dumps(graph_to_dict(g), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
