"""Closed-loop simulation in synchronous rounds.

Round ``k``: (1) agents emit ``y_i(k)``, controllers emit ``rho_i(k) = eta_i(k)``;
(2) every network signal is formed from those values; (3) controllers and
agents step. Random initial conditions are uniform on ``[-1, 1]`` from a
PCG64 generator seeded with ``SimConfig.seed`` (agents in order, then the
exosystem).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _numerics as nm
from .errors import (ConfigError, ConsistencyError, DimensionError, DivergedError,
                     StructuralError, SynthesisError)
from .lti import LtiSystem
from .netgraph import WeightedDigraph, has_spanning_tree, rooted_networks, row_stochastic
from .protocols import (ProtocolKind, ProtocolSpec, initial_state,
                        protocol1_step, protocol2_step, protocol3_step, protocol4_step)

__all__ = ["SimConfig", "Trace", "Summary", "network_signals", "regulated_signals", "run",
           "metrics", "initial_conditions", "decay_rate", "write_trace_csv", "write_summary",
           "write_plot_script", "write_metrics_csv", "export_run", "DIVERGENCE_BOUND"]

DIVERGENCE_BOUND = 1e12
SIGNAL_CHECK_TOL = 1e-12
SIGNAL_CHECK_EVERY = 50


@dataclass(frozen=True, eq=False)
class SimConfig:
    graph: WeightedDigraph
    agents: tuple
    protocol: ProtocolSpec
    horizon: int
    x0: tuple | None = None
    exo_x0: np.ndarray | None = None
    seed: int = 0
    rootset: frozenset | None = None
    allow_unverified: bool = False

    def __post_init__(self):
        agents = tuple(self.agents)
        object.__setattr__(self, "agents", agents)
        spec = self.protocol
        kind = spec.kind
        if not isinstance(self.horizon, (int, np.integer)) or self.horizon < 0:
            raise ConfigError(f"horizon must be a nonnegative integer, got {self.horizon!r}")
        if not spec.certified and not self.allow_unverified:
            radii = ", ".join(f"{k} = {v:.12g}" for k, v in spec.certificates.items())
            raise SynthesisError(f"protocol gains are not Schur-certified ({radii})")
        if len(agents) != self.graph.n:
            raise ConfigError(f"{len(agents)} agents for a {self.graph.n}-node graph")
        if not all(isinstance(a, LtiSystem) for a in agents):
            raise ConfigError("agents must be LtiSystem instances")
        if kind in (ProtocolKind.FULL_STATE, ProtocolKind.PARTIAL_STATE):
            for i, a in enumerate(agents):
                same = a.A.shape == spec.A.shape and a.B.shape == spec.B.shape and \
                    np.array_equal(a.A, spec.A) and np.array_equal(a.B, spec.B)
                if kind is ProtocolKind.PARTIAL_STATE:
                    same = same and a.C.shape == spec.C.shape and np.array_equal(a.C, spec.C)
                if not same:
                    raise ConfigError(f"agent {i + 1} differs from the protocol's agent model")
        else:
            if len(spec.compensators) != len(agents):
                raise ConfigError(f"{len(spec.compensators)} compensators for {len(agents)} agents")
            for i, (a, c) in enumerate(zip(agents, spec.compensators)):
                if a.p != spec.C.shape[0]:
                    raise ConfigError(f"agent {i + 1} output dimension differs from the target")
                if c.to_target.shape[1] != a.n + c.order or c.Ch.shape[0] != a.m:
                    raise ConfigError(f"compensator {i + 1} does not fit agent {i + 1}")
                if c.order and (a.Cm is None or c.Bh.shape[1] != a.Cm.shape[0]):
                    raise ConfigError(f"compensator {i + 1} needs the agent's local measurement")
        if self.rootset is not None:
            object.__setattr__(self, "rootset", frozenset(int(r) for r in self.rootset))
        if kind is ProtocolKind.REGULATED_SYNC:
            if not self.effective_rootset:
                raise ConfigError("regulated synchronization needs a nonempty rootset")
        else:
            if self.rootset:
                raise ConfigError(f"rootset given for a {kind.value} protocol")
            if self.exo_x0 is not None:
                raise ConfigError(f"exosystem state given for a {kind.value} protocol")
        if self.x0 is not None:
            x0 = tuple(np.array(v, dtype=float).reshape(-1) for v in self.x0)
            if len(x0) != len(agents) or any(v.size != a.n for v, a in zip(x0, agents)):
                raise ConfigError("x0 must hold one state vector per agent")
            object.__setattr__(self, "x0", x0)
        if self.exo_x0 is not None:
            xr0 = np.array(self.exo_x0, dtype=float).reshape(-1)
            if xr0.size != spec.exosystem.Ar.shape[0]:
                raise ConfigError("exo_x0 has the wrong dimension")
            object.__setattr__(self, "exo_x0", xr0)

    @property
    def effective_rootset(self) -> frozenset:
        return self.rootset if self.rootset is not None else self.graph.rootset

    @property
    def kind(self) -> ProtocolKind:
        return self.protocol.kind


@dataclass(frozen=True, eq=False)
class Trace:
    """Everything recorded per round ``k = 0..horizon``.

    Per-agent arrays (``x``, ``xi``) are tuples indexed by agent with shape
    ``(horizon + 1, dim)``; the others carry an agent axis in position 1.
    """

    kind: ProtocolKind
    x: tuple
    y: np.ndarray
    u: np.ndarray
    zeta: np.ndarray
    zeta_hat: np.ndarray
    eta: np.ndarray
    xhat: np.ndarray | None
    xi: tuple
    xr: np.ndarray | None
    yr: np.ndarray | None
    disagreement: np.ndarray
    regulation_error: np.ndarray | None

    @property
    def horizon(self) -> int:
        return self.y.shape[0] - 1

    @property
    def n_agents(self) -> int:
        return self.y.shape[1]


def network_signals(values, D, check=True):
    """``zeta_i = sum_j d_ij (v_i - v_j)`` for every agent, as an ``(N, dim)`` array.

    Returned from the entrywise sum of differences, which vanishes exactly
    on consensus; with ``check`` the stacked form ``((I - D) kron I) v`` is
    computed too and both must agree.
    """
    V = np.asarray(values, dtype=float)
    D = np.asarray(D, dtype=float)
    if V.ndim != 2 or V.shape[0] != D.shape[0]:
        raise DimensionError(f"need one value vector per agent: values {V.shape}, D {D.shape}")
    entrywise = np.einsum("ij,ijk->ik", D, V[:, None, :] - V[None, :, :])
    if check:
        stacked = V - D @ V
        scale = max(1.0, float(np.max(np.abs(V)))) if V.size else 1.0
        if V.size and np.max(np.abs(stacked - entrywise)) > SIGNAL_CHECK_TOL * scale:
            raise ConsistencyError("network signal forms disagree")
    return entrywise


def regulated_signals(y, y_r, rho, rooted, check=True):
    """``(zetabar, zetacheck)``: exosystem-relative output and localized exchange.

    ``zetabar_i = (y_i - y_r) - sum_j dbar_ij (y_j - y_r)`` and
    ``zetacheck_i = rho_i - sum_j dbar_ij rho_j``; cross-checked against the
    ``(2 + d_in(i))^-1 sum_j lbar_ij (.)`` form.
    """
    Y = np.asarray(y, dtype=float)
    R = np.asarray(rho, dtype=float)
    Dbar, Lbar = rooted.Dbar, rooted.Lbar
    if Y.ndim != 2 or R.ndim != 2 or Y.shape[0] != Dbar.shape[0] or R.shape[0] != Dbar.shape[0]:
        raise DimensionError("need one output and one rho vector per agent")
    E = Y - np.asarray(y_r, dtype=float).reshape(1, -1)
    zetabar = E - Dbar @ E
    zetacheck = R - Dbar @ R
    if check:
        inv = 1.0 / (2.0 + np.diag(rooted.Din))[:, None]
        for name, mine, other, ref in (("zetabar", zetabar, inv * (Lbar @ E), E),
                                       ("zetacheck", zetacheck, inv * (Lbar @ R), R)):
            scale = max(1.0, float(np.max(np.abs(ref)))) if ref.size else 1.0
            if ref.size and np.max(np.abs(mine - other)) > SIGNAL_CHECK_TOL * scale:
                raise ConsistencyError(f"{name} forms disagree")
    return zetabar, zetacheck


def initial_conditions(config: SimConfig):
    """``(x0 per agent, xr0 or None)``; unspecified parts drawn from the seeded PRNG."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    if config.x0 is not None:
        x0 = tuple(v.copy() for v in config.x0)
    else:
        x0 = tuple(rng.uniform(-1.0, 1.0, a.n) for a in config.agents)
    xr0 = None
    if config.kind is ProtocolKind.REGULATED_SYNC:
        r = config.protocol.exosystem.Ar.shape[0]
        xr0 = config.exo_x0.copy() if config.exo_x0 is not None else rng.uniform(-1.0, 1.0, r)
    return x0, xr0


def check_structure(config: SimConfig, force=False):
    """Raise :class:`StructuralError` unless the graph meets the protocol's condition.

    The check is skipped for ``allow_unverified`` configurations unless
    ``force`` is set.
    """
    if config.allow_unverified and not force:
        return
    if config.kind is ProtocolKind.REGULATED_SYNC:
        roots = config.effective_rootset
        if not rooted_networks(config.graph, roots).rooted:
            raise StructuralError(f"some node is not reachable from rootset "
                                  f"{sorted(r + 1 for r in roots)}")
    elif not has_spanning_tree(config.graph):
        raise StructuralError("graph has no directed spanning tree")


def _guard(k, *arrays):
    for a in arrays:
        if a.size and not abs(a).max() <= DIVERGENCE_BOUND:
            raise DivergedError(f"state magnitude exceeded {DIVERGENCE_BOUND:g} at step {k}")


def run(config: SimConfig, check_every=SIGNAL_CHECK_EVERY) -> Trace:
    """Simulate ``config`` for ``horizon`` rounds.

    Network signals are always taken from the stacked form; the entrywise
    form is recomputed and compared at round 0 and every ``check_every``
    rounds (``1`` checks every round, ``0`` never).
    """
    check_structure(config)
    spec, kind = config.protocol, config.kind
    N, K = config.graph.n, config.horizon
    x0, xr0 = initial_conditions(config)
    D = row_stochastic(config.graph).D
    if kind is ProtocolKind.REGULATED_SYNC:
        rooted = rooted_networks(config.graph, config.effective_rootset)
    n_c = spec.n
    p = spec.C.shape[0]
    m = config.agents[0].m

    y_hist = np.zeros((K + 1, N, p))
    u_hist = np.zeros((K + 1, N, m))
    zeta_dim = n_c if kind is ProtocolKind.FULL_STATE else p
    zeta_hist = np.zeros((K + 1, N, zeta_dim))
    zhat_hist = np.zeros((K + 1, N, n_c))
    eta_hist = np.zeros((K + 1, N, n_c))
    xhat_hist = None if kind is ProtocolKind.FULL_STATE else np.zeros((K + 1, N, n_c))

    if kind in (ProtocolKind.FULL_STATE, ProtocolKind.PARTIAL_STATE):
        A, B = spec.A, spec.B
        X = np.array(x0)
        x_hist = np.zeros((K + 1, N, A.shape[0]))
        ctrl = initial_state(spec, count=N)
        step = protocol1_step if kind is ProtocolKind.FULL_STATE else protocol2_step
        for k in range(K + 1):
            check_signals = check_every > 0 and k % check_every == 0
            Y = X if kind is ProtocolKind.FULL_STATE else X @ spec.C.T
            zeta = network_signals(Y, D, check_signals)
            zetahat = network_signals(ctrl.eta, D, check_signals)
            x_hist[k], y_hist[k], zeta_hist[k], zhat_hist[k], eta_hist[k] = \
                X, Y, zeta, zetahat, ctrl.eta
            if xhat_hist is not None:
                xhat_hist[k] = ctrl.xhat
            ctrl, U, _ = step(ctrl, zeta, zetahat, spec)
            u_hist[k] = U
            if k < K:
                X = X @ A.T + U @ B.T
                _guard(k + 1, X, ctrl.eta, ctrl.xhat if ctrl.xhat is not None else X)
        x_tuple = tuple(x_hist[:, i, :] for i in range(N))
        xi_tuple = tuple(np.zeros((K + 1, 0)) for _ in range(N))
        xr_hist = yr_hist = None
    else:
        agents = config.agents
        comps = spec.compensators
        xs = [v.copy() for v in x0]
        ctrls = [initial_state(spec, agent=i) for i in range(N)]
        x_lists = [np.zeros((K + 1, a.n)) for a in agents]
        xi_lists = [np.zeros((K + 1, c.order)) for c in comps]
        regulated = kind is ProtocolKind.REGULATED_SYNC
        if regulated:
            exo = spec.exosystem
            xr = xr0.copy()
            xr_hist = np.zeros((K + 1, xr.size))
            yr_hist = np.zeros((K + 1, exo.Cr.shape[0]))
        else:
            xr_hist = yr_hist = None
        for k in range(K + 1):
            check_signals = check_every > 0 and k % check_every == 0
            Y = np.array([a.C @ x for a, x in zip(agents, xs)])
            ETA = np.array([c.eta for c in ctrls])
            if regulated:
                yr = exo.Cr @ xr
                zeta, zetahat = regulated_signals(Y, yr, ETA, rooted, check_signals)
                xr_hist[k], yr_hist[k] = xr, yr
            else:
                zeta = network_signals(Y, D, check_signals)
                zetahat = network_signals(ETA, D, check_signals)
            y_hist[k], zeta_hist[k], zhat_hist[k], eta_hist[k] = Y, zeta, zetahat, ETA
            for i, (a, c) in enumerate(zip(agents, comps)):
                x_lists[i][k] = xs[i]
                xi_lists[i][k] = ctrls[i].xi
                xhat_hist[k, i] = ctrls[i].xhat
                z = a.Cm @ xs[i] if a.Cm is not None else np.zeros(0)
                stepper = protocol4_step if regulated else protocol3_step
                ctrls[i], u, _ = stepper(ctrls[i], zeta[i], zetahat[i], z, spec, c)
                u_hist[k, i] = u
                if k < K:
                    xs[i] = a.A @ xs[i] + a.B @ u
            if k < K:
                if regulated:
                    xr = exo.Ar @ xr
                _guard(k + 1, *xs, *(c.eta for c in ctrls), *(c.xhat for c in ctrls),
                       *(c.xi for c in ctrls))
        x_tuple = tuple(x_lists)
        xi_tuple = tuple(xi_lists)

    if kind in (ProtocolKind.FULL_STATE, ProtocolKind.PARTIAL_STATE):
        spread = x_hist.max(axis=1) - x_hist.min(axis=1)
    else:
        spread = y_hist.max(axis=1) - y_hist.min(axis=1)
    disagreement = spread.max(axis=-1) if spread.shape[-1] else np.zeros(K + 1)
    regulation = None
    if yr_hist is not None:
        regulation = np.abs(y_hist - yr_hist[:, None, :]).max(axis=(1, 2))
    for arr in (y_hist, u_hist, zeta_hist, zhat_hist, eta_hist, disagreement):
        arr.setflags(write=False)
    return Trace(kind=kind, x=x_tuple, y=y_hist, u=u_hist, zeta=zeta_hist, zeta_hat=zhat_hist,
                 eta=eta_hist, xhat=xhat_hist, xi=xi_tuple, xr=xr_hist, yr=yr_hist,
                 disagreement=disagreement, regulation_error=regulation)


# -- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class Summary:
    initial_disagreement: float
    final_disagreement: float
    decay_rate: float
    settled_step: int | None
    final_regulation_error: float | None = None
    regulation_decay_rate: float | None = None


def decay_rate(series, start=None, stop=None, floor_ratio=1e-12):
    """Least-squares slope of ``log(series[k])`` against ``k``.

    Samples at or below ``floor_ratio * max(series)`` are treated as
    round-off and dropped. The window defaults to the last half; if it holds
    fewer than two usable samples the whole series is used. Returns ``0.0``
    for an all-zero series and ``-inf`` when the signal falls below the
    floor before two samples are available.
    """
    s = np.asarray(series, dtype=float)
    if s.size == 0 or not np.any(s > 0):
        return 0.0
    floor = floor_ratio * float(np.max(s))
    lo = s.size // 2 if start is None else start
    hi = s.size if stop is None else stop
    idx = np.arange(s.size)
    usable = s > floor
    window = usable & (idx >= lo) & (idx < hi)
    if window.sum() < 2:
        window = usable
    if window.sum() < 2:
        return -math.inf
    slope, _ = np.polyfit(idx[window], np.log(s[window]), 1)
    return float(slope)


def metrics(trace: Trace, tol=1e-6) -> Summary:
    d = trace.disagreement
    below = np.flatnonzero(d < tol)
    reg = trace.regulation_error
    return Summary(
        initial_disagreement=float(d[0]),
        final_disagreement=float(d[-1]),
        decay_rate=decay_rate(d),
        settled_step=int(below[0]) if below.size else None,
        final_regulation_error=None if reg is None else float(reg[-1]),
        regulation_decay_rate=None if reg is None else decay_rate(reg),
    )


# -- export ------------------------------------------------------------------

CSV_COLUMNS = ("k", "agent", "state_index", "x", "y", "u", "zeta", "zeta_hat", "eta", "xhat", "xi")


def _cell(arr, idx):
    return "%.17g" % (arr[idx] + 0.0) if idx < arr.shape[-1] else ""


def write_trace_csv(trace: Trace, path) -> None:
    """Long-format CSV: one row per ``(k, agent, state_index)``, 1-based agent/index."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k in range(trace.horizon + 1):
            for i in range(trace.n_agents):
                per = [trace.x[i][k], trace.y[k, i], trace.u[k, i], trace.zeta[k, i],
                       trace.zeta_hat[k, i], trace.eta[k, i],
                       trace.xhat[k, i] if trace.xhat is not None else np.zeros(0),
                       trace.xi[i][k]]
                width = max(a.shape[-1] for a in per)
                for s in range(width):
                    w.writerow([k, i + 1, s + 1] + [_cell(a, s) for a in per])


def write_metrics_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["k", "disagreement"]
        if trace.regulation_error is not None:
            header += ["regulation_error", "y_r"]
        w.writerow(header)
        for k in range(trace.horizon + 1):
            row = [k, "%.17g" % (trace.disagreement[k] + 0.0)]
            if trace.regulation_error is not None:
                row += ["%.17g" % trace.regulation_error[k], "%.17g" % trace.yr[k, 0]]
            w.writerow(row)


def _num(v):
    if v is None:
        return None
    if isinstance(v, (int, np.integer)):
        return int(v)
    if math.isinf(v) or math.isnan(v):
        return str(v)
    return nm.format_decimal(v)


def summary_to_dict(summary: Summary, **context) -> dict:
    out = dict(context)
    for key in ("initial_disagreement", "final_disagreement", "decay_rate", "settled_step",
                "final_regulation_error", "regulation_decay_rate"):
        out[key] = _num(getattr(summary, key))
    return out


def write_summary(summary: Summary, path, **context) -> None:
    Path(path).write_text(json.dumps(summary_to_dict(summary, **context), indent=2,
                                     sort_keys=True) + "\n")


def write_plot_script(trace: Trace, path, trace_csv="trace.csv", metrics_csv="metrics.csv",
                      title="") -> None:
    """gnuplot script rendering disagreement and per-state trajectories."""
    lines = [
        "# gnuplot script; run from the directory holding the CSV files",
        "set datafile separator ','",
        "set terminal pngcairo size 1000,700",
        "set key outside right",
        "set xlabel 'k'",
        "",
        "set output 'disagreement.png'",
        "set logscale y",
        f"set title '{title} disagreement'",
        f"plot '{metrics_csv}' using 1:2 skip 1 with lines title 'disagreement'"
        + (f", '{metrics_csv}' using 1:3 skip 1 with lines title 'regulation error'"
           if trace.regulation_error is not None else ""),
        "unset logscale y",
        "",
    ]
    for i in range(trace.n_agents):
        dims = trace.x[i].shape[1]
        lines.append(f"set output 'states_agent{i + 1}.png'")
        lines.append(f"set title '{title} agent {i + 1} states'")
        parts = [f"'{trace_csv}' using 1:(($2=={i + 1} && $3=={s + 1}) ? $4 : 1/0) skip 1 "
                 f"with lines title 'x{s + 1}'" for s in range(dims)]
        lines.append("plot " + ", \\\n     ".join(parts))
        lines.append("")
    Path(path).write_text("\n".join(lines))


def export_run(trace: Trace, out_dir, tol=1e-6, title="", **context) -> Summary:
    """Write ``trace.csv``, ``metrics.csv``, ``summary.json`` and ``plot.gp`` to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = metrics(trace, tol)
    write_trace_csv(trace, out / "trace.csv")
    write_metrics_csv(trace, out / "metrics.csv")
    write_summary(summary, out / "summary.json", kind=trace.kind.value, agents=trace.n_agents,
                  horizon=trace.horizon, settle_tolerance=nm.format_decimal(tol), **context)
    write_plot_script(trace, out / "plot.gp", title=title)
    return summary
