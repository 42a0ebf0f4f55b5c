"""Stacked closed-loop matrices and per-instance stability certificates.

:func:`assemble` writes the networked closed loop as one matrix ``M`` acting
on the stacked state, built from Kronecker products only (it shares no code
with :mod:`scalefree.sim`). A change of coordinates ``T`` then separates the
absolute motion from the disagreement (or regulation) errors. Blocks are
ordered so that ``T M T^-1`` is block upper-triangular:

* protocols 1-3: ``[hidden, absolute, xbar, e, etilde, omega]`` where
  ``xbar = Pi xbar_all``, ``e = Pi (xbar_all - eta)`` and
  ``etilde = Pi ((I - D) xbar_all - xhat)`` with ``Pi = [I, -1]``;
* protocol 4: ``[hidden, exo, xtilde, e, etilde, omega]`` with
  ``xtilde_i = xbar_i - lift x_r``, ``e = xtilde - eta`` and
  ``etilde = (I - Dbar) xtilde - xhat``.

``hidden`` holds the compensated agents' zero dynamics, ``omega`` the
pre-compensator residuals. Everything after ``absolute``/``exo`` is the
sub-system whose spectral radius decides synchronization.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import _numerics as nm
from .errors import StructuralError
from .netgraph import rooted_networks, row_stochastic
from .protocols import ProtocolKind
from .sim import SimConfig, Trace, check_structure, run

__all__ = ["ClosedLoopModel", "Certificate", "assemble", "stacked_state", "oracle_compare",
           "transformed_coordinates", "triangularity_defect", "certify_synchronization",
           "certificate_to_dict", "write_certificate", "TRIANGULAR_TOL"]

TRIANGULAR_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ClosedLoopModel:
    """``s(k+1) = M s(k)`` plus the coordinates ``t = T s`` of the error analysis.

    ``layout`` slices ``s`` (``X`` = agents with compensators, ``xhat``,
    ``eta``, ``xr``); ``blocks`` slices ``t`` in triangular order;
    ``expected`` gives the diagonal block each error coordinate must carry.
    """

    kind: ProtocolKind
    M: np.ndarray
    layout: dict
    T: np.ndarray
    transformed: np.ndarray
    blocks: dict
    expected: dict
    error_blocks: tuple

    @property
    def error_slice(self) -> slice:
        names = self.error_blocks
        if not names:
            return slice(0, 0)
        return slice(self.blocks[names[0]].start, self.blocks[names[-1]].stop)

    @property
    def error_dynamics(self) -> np.ndarray:
        s = self.error_slice
        return self.transformed[s, s]


def _blkdiag(mats, rows=0, cols=0):
    mats = list(mats)
    if not mats:
        return np.zeros((rows, cols))
    return sla.block_diag(*mats)


def _agent_blocks(config: SimConfig):
    """Per-agent ``(A_cl, B_cl, C_cl, Phi, Psi, As, Cs)`` on state ``(x_i, xi_i)``."""
    spec = config.protocol
    out = []
    for i, agent in enumerate(config.agents):
        if spec.kind in (ProtocolKind.FULL_STATE, ProtocolKind.PARTIAL_STATE):
            n = agent.n
            C = np.eye(n) if spec.kind is ProtocolKind.FULL_STATE else agent.C
            out.append((agent.A, agent.B, C, np.eye(n), np.zeros((0, n)),
                        np.zeros((0, 0)), np.zeros((agent.m, 0))))
        else:
            comp = spec.compensators[i]
            A_cl, B_cl, C_cl = comp.interconnection(agent)
            out.append((A_cl, B_cl, C_cl, comp.to_target, comp.to_residual, comp.As, comp.Cs))
    return out


def assemble(config: SimConfig) -> ClosedLoopModel:
    spec, kind = config.protocol, config.protocol.kind
    N = config.graph.n
    A, B, C, K = spec.A, spec.B, spec.C, spec.K
    n = A.shape[0]
    I_N = np.eye(N)
    regulated = kind is ProtocolKind.REGULATED_SYNC
    if regulated:
        Wsig = np.eye(N) - rooted_networks(config.graph, config.effective_rootset).Dbar
    else:
        Wsig = np.eye(N) - row_stochastic(config.graph).D

    agents = _agent_blocks(config)
    Acl = _blkdiag(a[0] for a in agents)
    BclK = _blkdiag(a[1] @ K for a in agents)
    Ccl = _blkdiag(a[2] for a in agents)
    nX = Acl.shape[0]
    observer = kind is not ProtocolKind.FULL_STATE
    nr = spec.exosystem.Ar.shape[0] if regulated else 0

    layout = {}
    pos = 0
    for name, size in (("X", nX), ("xhat", N * n if observer else 0), ("eta", N * n), ("xr", nr)):
        layout[name] = slice(pos, pos + size)
        pos += size
    M = np.zeros((pos, pos))
    X, XH, ETA, XR = (layout[k] for k in ("X", "xhat", "eta", "xr"))

    M[X, X] = Acl
    M[X, ETA] = -BclK
    M[ETA, ETA] = np.kron(I_N, A - B @ K) - np.kron(Wsig, A)
    if not observer:
        M[ETA, X] = np.kron(Wsig, A)
    else:
        H = spec.H
        M[ETA, XH] = np.kron(I_N, A)
        M[XH, XH] = np.kron(I_N, A - H @ C)
        M[XH, ETA] = -np.kron(Wsig, B @ K)
        M[XH, X] = np.kron(Wsig, H) @ Ccl
        if regulated:
            exo = spec.exosystem
            M[XH, XR] = -np.kron(Wsig, H) @ np.kron(np.ones((N, 1)), exo.Cr)
            M[XR, XR] = exo.Ar

    T, blocks, expected, error_blocks = _transform(config, agents, layout, Wsig)
    transformed = T @ M @ np.linalg.inv(T)
    return ClosedLoopModel(kind=kind, M=M, layout=layout, T=T, transformed=transformed,
                           blocks=blocks, expected=expected, error_blocks=error_blocks)


def _transform(config, agents, layout, Wsig):
    spec, kind = config.protocol, config.protocol.kind
    N = config.graph.n
    A, B, C, K = spec.A, spec.B, spec.C, spec.K
    n = A.shape[0]
    dim = layout["xr"].stop
    regulated = kind is ProtocolKind.REGULATED_SYNC
    observer = kind is not ProtocolKind.FULL_STATE

    # per-agent maps from the stacked X to target, residual and hidden coordinates
    sizes = [a[0].shape[0] for a in agents]
    offsets = np.r_[0, np.cumsum(sizes)]
    nX = int(offsets[-1])
    Phi = np.zeros((N * n, nX))
    Psi_rows, Hid_rows = [], []
    for i, a in enumerate(agents):
        cols = slice(offsets[i], offsets[i + 1])
        Phi[i * n:(i + 1) * n, cols] = a[3]
        psi = np.zeros((a[4].shape[0], nX))
        psi[:, cols] = a[4]
        Psi_rows.append(psi)
        known = np.vstack([a[3], a[4]])
        comp = sla.null_space(known).T if known.shape[0] < sizes[i] else np.zeros((0, sizes[i]))
        hid = np.zeros((comp.shape[0], nX))
        hid[:, cols] = comp
        Hid_rows.append(hid)
    Psi = np.vstack(Psi_rows) if Psi_rows else np.zeros((0, nX))
    Hid = np.vstack(Hid_rows) if Hid_rows else np.zeros((0, nX))

    def lift(mat, part):
        out = np.zeros((mat.shape[0], dim))
        out[:, layout[part]] = mat
        return out

    xbar_all = lift(Phi, "X")
    eta = lift(np.eye(N * n), "eta")
    xhat = lift(np.eye(N * n), "xhat") if observer else None
    rows = [("hidden", lift(Hid, "X"))]
    As_all = _blkdiag((a[5] for a in agents))
    expected = {"hidden": None}

    if regulated:
        exo = spec.exosystem
        nr = exo.Ar.shape[0]
        xr = lift(np.eye(nr), "xr")
        xtilde = xbar_all - np.kron(np.ones((N, 1)), exo.lift_matrix) @ xr
        rows += [("exo", xr),
                 ("xbar", xtilde),
                 ("e", xtilde - eta),
                 ("etilde", np.kron(Wsig, np.eye(n)) @ xtilde - xhat)]
        Dbar = np.eye(N) - Wsig
        expected.update(exo=exo.Ar, xbar=np.kron(np.eye(N), A - B @ K),
                        e=np.kron(Dbar, A), etilde=np.kron(np.eye(N), A - spec.H @ C))
        error_names = ("xbar", "e", "etilde", "omega")
    else:
        Pi = np.hstack([np.eye(N - 1), -np.ones((N - 1, 1))])
        P = np.kron(Pi, np.eye(n))
        sel_last = np.kron(np.eye(N)[-1:], np.eye(n))
        absolute = [sel_last @ xbar_all, sel_last @ eta]
        if observer:
            absolute.append(sel_last @ xhat)
        rows += [("absolute", np.vstack(absolute)),
                 ("xbar", P @ xbar_all),
                 ("e", P @ (xbar_all - eta))]
        Dt = row_stochastic(config.graph).Dtilde
        Dt = np.zeros((0, 0)) if Dt is None else Dt
        expected.update(absolute=None, xbar=np.kron(np.eye(N - 1), A - B @ K),
                        e=np.kron(Dt, A))
        if observer:
            rows.append(("etilde", P @ (np.kron(Wsig, np.eye(n)) @ xbar_all - xhat)))
            expected["etilde"] = np.kron(np.eye(N - 1), A - spec.H @ C)
        error_names = ("xbar", "e", "etilde", "omega") if observer else ("xbar", "e", "omega")
    rows.append(("omega", lift(Psi, "X")))
    expected["omega"] = As_all

    blocks, pos = {}, 0
    for name, mat in rows:
        blocks[name] = slice(pos, pos + mat.shape[0])
        pos += mat.shape[0]
    T = np.vstack([mat for _, mat in rows])
    if T.shape != (dim, dim):
        raise StructuralError(f"coordinate change has shape {T.shape}, expected {(dim, dim)}")
    return T, blocks, expected, tuple(error_names)


def triangularity_defect(model: ClosedLoopModel):
    """``(below, diagonal)``: largest entry below the block diagonal and largest
    deviation of a diagonal block from the predicted one."""
    Mt = model.transformed
    names = list(model.blocks)
    below = 0.0
    diag = 0.0
    for r, rn in enumerate(names):
        rs = model.blocks[rn]
        for cn in names[:r]:
            blk = Mt[rs, model.blocks[cn]]
            if blk.size:
                below = max(below, float(np.max(np.abs(blk))))
        want = model.expected.get(rn)
        if want is not None and want.size:
            diag = max(diag, float(np.max(np.abs(Mt[rs, rs] - want))))
    return below, diag


def stacked_state(trace: Trace, k: int) -> np.ndarray:
    """The vector ``s(k)`` of :func:`assemble`'s layout, read from a trace."""
    parts = [np.concatenate([np.r_[trace.x[i][k], trace.xi[i][k]] for i in range(trace.n_agents)])]
    if trace.xhat is not None:
        parts.append(trace.xhat[k].reshape(-1))
    parts.append(trace.eta[k].reshape(-1))
    if trace.xr is not None:
        parts.append(trace.xr[k])
    return np.concatenate(parts)


def transformed_coordinates(model: ClosedLoopModel, trace: Trace) -> dict:
    """Each coordinate block of ``T s(k)`` along the trace, shape ``(K + 1, dim)``."""
    S = np.array([stacked_state(trace, k) for k in range(trace.horizon + 1)])
    Tt = S @ model.T.T
    return {name: Tt[:, sl] for name, sl in model.blocks.items()}


def oracle_compare(config: SimConfig, steps: int, model: ClosedLoopModel | None = None) -> float:
    """Largest ``|M^k s(0) - s_sim(k)|`` over ``k <= steps``."""
    model = assemble(config) if model is None else model
    trace = run(dataclasses.replace(config, horizon=steps))
    s = stacked_state(trace, 0)
    worst = 0.0
    for k in range(steps + 1):
        if k:
            s = model.M @ s
        dev = np.abs(s - stacked_state(trace, k))
        if dev.size:
            worst = max(worst, float(np.max(dev)))
    return worst


@dataclass(frozen=True)
class Certificate:
    kind: str
    certified: bool
    spectral_radius: float
    block_radii: dict
    triangularity_defect: float
    diagonal_defect: float

    @property
    def margin(self) -> float:
        return 1.0 - self.spectral_radius


def certify_synchronization(config: SimConfig, tol=nm.UNIT_DISK_TOL) -> Certificate:
    """Spectral radius of the error sub-dynamics; refuses on a structural violation.

    The zero-dynamics block (``hidden``) is part of the verdict: it never
    reaches the outputs but must still be stable for internal stability.
    """
    check_structure(config, force=True)
    model = assemble(config)
    below, diag = triangularity_defect(model)
    Mt = model.transformed
    radii = {}
    for name, sl in model.blocks.items():
        if name in ("absolute", "exo"):
            continue
        radii[name] = nm.spectral_radius(Mt[sl, sl]) if sl.stop > sl.start else 0.0
    sub = model.error_dynamics
    rho = nm.spectral_radius(sub) if sub.size else 0.0
    ok = rho < 1.0 - tol and radii.get("hidden", 0.0) < 1.0 - tol
    return Certificate(kind=config.kind.value, certified=bool(ok), spectral_radius=rho,
                       block_radii=radii, triangularity_defect=below, diagonal_defect=diag)


def certificate_to_dict(cert: Certificate, **context) -> dict:
    out = dict(context)
    out.update(
        kind=cert.kind,
        certified=cert.certified,
        spectral_radius=nm.format_decimal(cert.spectral_radius),
        block_spectral_radii={k: nm.format_decimal(v) for k, v in cert.block_radii.items()},
        triangularity_defect=nm.format_decimal(cert.triangularity_defect),
        diagonal_defect=nm.format_decimal(cert.diagonal_defect),
    )
    return out


def write_certificate(cert: Certificate, path, **context) -> None:
    Path(path).write_text(json.dumps(certificate_to_dict(cert, **context), indent=2,
                                     sort_keys=True) + "\n")
