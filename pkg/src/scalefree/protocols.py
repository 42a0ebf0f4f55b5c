"""Per-agent controller transitions for the four collaborative protocols.

Each ``protocolN_step`` consumes the agent's controller state plus the
network signals it receives in the current round, and returns the successor
state, the control input ``u_i(k)`` and the broadcast variable
``rho_i(k) = eta_i(k)`` (pre-update value).

Vectors are handled as rows (``x @ A.T``), so protocols 1 and 2 also accept
a leading agent axis and step a whole homogeneous network in one call.
Nothing here sees the graph: all network influence arrives through the
signal arguments.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _numerics as nm
from .errors import DimensionError, SynthesisError
from .synthesis import Compensator, ExosystemSpec, GainSet, TargetModel

__all__ = ["ProtocolKind", "ProtocolSpec", "ControllerState", "initial_state",
           "protocol1_step", "protocol2_step", "protocol3_step", "protocol4_step"]


class ProtocolKind(enum.Enum):
    FULL_STATE = "full_state"
    PARTIAL_STATE = "partial_state"
    OUTPUT_SYNC = "output_sync"
    REGULATED_SYNC = "regulated_sync"


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ProtocolSpec:
    """Coefficient set of one protocol.

    ``(A, B, C)`` is the agent model (protocols 1-2), the target model
    (protocol 3) or the augmented exosystem (protocol 4). ``compensators``
    holds one pre-compensator per agent for protocols 3-4.

    Gains must pass the Schur certificates unless ``require_certified`` is
    false; such a spec records its failing radii and is only accepted by
    the simulator when explicitly allowed (to study what goes wrong).
    """

    kind: ProtocolKind
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray
    H: np.ndarray | None = None
    compensators: tuple = ()
    exosystem: ExosystemSpec | None = None
    require_certified: bool = True
    certificates: dict = field(init=False)

    def __post_init__(self):
        kind = ProtocolKind(self.kind)
        A = nm.as_matrix(self.A, "A")
        n = A.shape[0]
        B = nm.as_matrix(self.B, "B", rows=n)
        C = nm.as_matrix(self.C, "C", cols=n)
        K = nm.as_matrix(self.K, "K", rows=B.shape[1], cols=n)
        object.__setattr__(self, "kind", kind)
        for name, val in (("A", A), ("B", B), ("C", C), ("K", K)):
            object.__setattr__(self, name, _frozen(val))
        certs = {"rho_feedback": nm.spectral_radius(A - B @ K)}
        if kind is ProtocolKind.FULL_STATE:
            if C.shape[0] != n or not np.array_equal(C, np.eye(n)):
                raise DimensionError("full-state coupling requires C = I")
        else:
            if self.H is None:
                raise SynthesisError(f"{kind.value} protocol needs an observer gain H")
            H = nm.as_matrix(self.H, "H", rows=n, cols=C.shape[0])
            object.__setattr__(self, "H", _frozen(H))
            certs["rho_observer"] = nm.spectral_radius(A - H @ C)
        for name, rho in certs.items():
            if self.require_certified and not rho < 1.0 - nm.UNIT_DISK_TOL:
                raise SynthesisError(f"{name} = {rho:.12g}: gain is not Schur-certified")
        if kind in (ProtocolKind.OUTPUT_SYNC, ProtocolKind.REGULATED_SYNC):
            if not self.compensators:
                raise SynthesisError(f"{kind.value} protocol needs per-agent compensators")
            if not all(isinstance(c, Compensator) for c in self.compensators):
                raise TypeError("compensators must be Compensator instances")
            object.__setattr__(self, "compensators", tuple(self.compensators))
        elif self.compensators:
            raise SynthesisError(f"{kind.value} protocol takes no compensators")
        if kind is ProtocolKind.REGULATED_SYNC and self.exosystem is None:
            raise SynthesisError("regulated synchronization needs an exosystem")
        object.__setattr__(self, "certificates", certs)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def certified(self) -> bool:
        return all(rho < 1.0 - nm.UNIT_DISK_TOL for rho in self.certificates.values())

    @classmethod
    def full_state(cls, A, B, K, require_certified=True):
        A = nm.as_matrix(A, "A")
        return cls(ProtocolKind.FULL_STATE, A, B, np.eye(A.shape[0]), K,
                   require_certified=require_certified)

    @classmethod
    def partial_state(cls, gains: GainSet):
        return cls(ProtocolKind.PARTIAL_STATE, gains.A, gains.B, gains.C, gains.K, gains.H)

    @classmethod
    def output_sync(cls, target: TargetModel, gains: GainSet, compensators):
        s = target.system
        if not (np.array_equal(gains.A, s.A) and np.array_equal(gains.B, s.B)
                and np.array_equal(gains.C, s.C)):
            raise SynthesisError("gains were designed for a different model than the target")
        return cls(ProtocolKind.OUTPUT_SYNC, s.A, s.B, s.C, gains.K, gains.H, tuple(compensators))

    @classmethod
    def regulated_sync(cls, exosystem: ExosystemSpec, gains: GainSet, compensators):
        s = exosystem.augmented
        if not (np.array_equal(gains.A, s.A) and np.array_equal(gains.B, s.B)
                and np.array_equal(gains.C, s.C)):
            raise SynthesisError("gains were designed for a different model than the exosystem")
        return cls(ProtocolKind.REGULATED_SYNC, s.A, s.B, s.C, gains.K, gains.H,
                   tuple(compensators), exosystem)


@dataclass(frozen=True, eq=False)
class ControllerState:
    """Protocol memory: ``eta`` always, ``xhat`` for 2-4, ``xi`` for 3-4."""

    eta: np.ndarray
    xhat: np.ndarray | None = None
    xi: np.ndarray | None = None


def initial_state(spec: ProtocolSpec, agent: int | None = None, count: int | None = None):
    """Zero controller state; ``count`` adds a leading agent axis (protocols 1-2)."""
    lead = () if count is None else (count,)
    eta = np.zeros(lead + (spec.n,))
    if spec.kind is ProtocolKind.FULL_STATE:
        return ControllerState(eta)
    xhat = np.zeros(lead + (spec.n,))
    if spec.kind is ProtocolKind.PARTIAL_STATE:
        return ControllerState(eta, xhat)
    if agent is None:
        raise ValueError("protocols 3-4 need the agent index to size xi")
    return ControllerState(eta, xhat, np.zeros(spec.compensators[agent].order))


def _check(vec, size, name):
    vec = np.asarray(vec, dtype=float)
    if vec.shape[-1:] != (size,):
        raise DimensionError(f"{name} must have trailing dimension {size}, got shape {vec.shape}")
    return vec


def protocol1_step(state: ControllerState, zeta, zetahat, spec: ProtocolSpec):
    """Full-state coupling: ``eta+ = A eta + B u + A zeta - A zetahat``, ``u = -K eta``."""
    if spec.kind is not ProtocolKind.FULL_STATE:
        raise ValueError(f"protocol1_step needs a full_state spec, got {spec.kind.value}")
    n = spec.n
    eta = _check(state.eta, n, "eta")
    zeta = _check(zeta, n, "zeta")
    zetahat = _check(zetahat, n, "zetahat")
    A, B, K = spec.A, spec.B, spec.K
    u = -(eta @ K.T)
    eta_next = eta @ A.T + u @ B.T + zeta @ A.T - zetahat @ A.T
    return ControllerState(eta_next), u, eta


def protocol2_step(state: ControllerState, zeta, zetahat, spec: ProtocolSpec):
    """Partial-state coupling with an observer of the network signal ``zeta``."""
    if spec.kind is not ProtocolKind.PARTIAL_STATE:
        raise ValueError(f"protocol2_step needs a partial_state spec, got {spec.kind.value}")
    n, p = spec.n, spec.C.shape[0]
    eta = _check(state.eta, n, "eta")
    xhat = _check(state.xhat, n, "xhat")
    zeta = _check(zeta, p, "zeta")
    zetahat = _check(zetahat, n, "zetahat")
    A, B, C, K, H = spec.A, spec.B, spec.C, spec.K, spec.H
    u = -(eta @ K.T)
    eta_next = eta @ A.T + u @ B.T + xhat @ A.T - zetahat @ A.T
    xhat_next = xhat @ A.T - (zetahat @ K.T) @ B.T + (zeta - xhat @ C.T) @ H.T
    return ControllerState(eta_next, xhat_next), u, eta


def _compensator_update(xi, z, v, comp: Compensator):
    xi = _check(xi, comp.order, "xi")
    z = _check(z, comp.Bh.shape[1], "z")
    xi_next = xi @ comp.Ah.T + z @ comp.Bh.T + v @ comp.Eh.T
    u = xi @ comp.Ch.T + v @ comp.Dh.T
    return xi_next, u


def protocol3_step(state: ControllerState, zeta, zetahat, z, spec: ProtocolSpec,
                   compensator: Compensator):
    """Output synchronization: protocol 2 on the target model behind a pre-compensator."""
    if spec.kind is not ProtocolKind.OUTPUT_SYNC:
        raise ValueError(f"protocol3_step needs an output_sync spec, got {spec.kind.value}")
    if compensator is None:
        raise SynthesisError("protocol3_step needs the agent's compensator")
    n, p = spec.n, spec.C.shape[0]
    eta = _check(state.eta, n, "eta")
    xhat = _check(state.xhat, n, "xhat")
    zeta = _check(zeta, p, "zeta")
    zetahat = _check(zetahat, n, "zetahat")
    A, B, C, K, H = spec.A, spec.B, spec.C, spec.K, spec.H
    v = -(eta @ K.T)
    xi_next, u = _compensator_update(state.xi, z, v, compensator)
    xhat_next = xhat @ A.T - (zetahat @ K.T) @ B.T + (zeta - xhat @ C.T) @ H.T
    eta_next = eta @ A.T + v @ B.T + xhat @ A.T - zetahat @ A.T
    return ControllerState(eta_next, xhat_next, xi_next), u, eta


def protocol4_step(state: ControllerState, zetabar, zetacheck, z, spec: ProtocolSpec,
                   compensator: Compensator):
    """Regulated output synchronization against the augmented exosystem."""
    if spec.kind is not ProtocolKind.REGULATED_SYNC:
        raise ValueError(f"protocol4_step needs a regulated_sync spec, got {spec.kind.value}")
    if compensator is None:
        raise SynthesisError("protocol4_step needs the agent's compensator")
    n, p = spec.n, spec.C.shape[0]
    eta = _check(state.eta, n, "eta")
    xhat = _check(state.xhat, n, "xhat")
    zetabar = _check(zetabar, p, "zetabar")
    zetacheck = _check(zetacheck, n, "zetacheck")
    A, B, C, K, H = spec.A, spec.B, spec.C, spec.K, spec.H
    v = -(eta @ K.T)
    xi_next, u = _compensator_update(state.xi, z, v, compensator)
    xhat_next = xhat @ A.T + (zetabar - xhat @ C.T) @ H.T - (zetacheck @ K.T) @ B.T
    eta_next = eta @ A.T + v @ B.T + xhat @ A.T - zetacheck @ A.T
    return ControllerState(eta_next, xhat_next, xi_next), u, eta
