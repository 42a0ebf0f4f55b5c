"""Offline design: feedback/observer gains, target models, pre-compensators
and exosystem augmentation.

Pre-compensator construction (SISO, minimum-phase, relative degree
``r <= nq``), for agent ``(A_i, B_i, C_i, Cm_i)`` and target ``(C, A, B)``:

* an observer ``xa+ = A_i xa + B_i u + L (z - Cm_i xa)``;
* a copy of the target driven by ``v``: ``s+ = A s + B v``;
* feedback linearization ``u = (w - C_i A_i^r xa) / (C_i A_i^(r-1) B_i)``
  with ``w = C A^r s + C A^(r-1) B v``, i.e. the target output ``r``
  steps ahead.

The agent output then tracks ``C s`` up to the observer error and an
``r``-step start-up transient. Both are captured by an autonomous residual
``omega = (p_0..p_{r-1}, eps)`` with ``p_j = y(k+j) - C s(k+j)`` and
``eps = x - xa``. The homogenized state is recovered from the next ``nq``
outputs through the target observability matrix. The remaining ``n_i - r``
directions are the agent's zero dynamics: driven by ``y`` and invisible in
it, so they are reported separately rather than folded into ``As``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _numerics as nm
from .errors import ConsistencyError, ConvergenceError, SynthesisError, UnsupportedClassError
from .lti import LtiSystem, analyze, is_schur, pbh_failures

__all__ = [
    "DareSolution",
    "GainSet",
    "TargetModel",
    "Compensator",
    "ExosystemSpec",
    "solve_dare_iteration",
    "design_state_gain",
    "design_observer_gain",
    "design_gains",
    "default_target",
    "companion_target",
    "design_precompensator",
    "augment_exosystem",
    "observability_matrix",
]

DARE_TOL = 1e-12
DARE_MAX_ITER = 10_000


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DareSolution:
    P: np.ndarray
    K: np.ndarray
    iterations: int
    increments: tuple  # ||P_{k+1} - P_k||_inf per iteration


def solve_dare_iteration(A, B, Q=None, R=None, tol=DARE_TOL, max_iter=DARE_MAX_ITER):
    """Fixed-point iteration of the discrete Riccati equation from ``P0 = Q``.

    ``P+ = Q + A'PA - A'PB (R + B'PB)^-1 B'PA`` until the sup-norm increment
    drops below ``tol * max(1, ||P||)``. Returns the final ``P`` and
    ``K = (R + B'PB)^-1 B'PA``.
    """
    A = nm.as_matrix(A, "A")
    B = nm.as_matrix(B, "B", rows=A.shape[0])
    n, m = B.shape
    Q = np.eye(n) if Q is None else nm.as_matrix(Q, "Q", n, n)
    R = np.eye(m) if R is None else nm.as_matrix(R, "R", m, m)
    bad = pbh_failures(A, B)
    if bad:
        raise SynthesisError(
            f"(A, B) is not stabilizable: PBH rank test fails at eigenvalue {bad[0]:.6g}")

    P = Q.copy()
    increments = []
    for it in range(1, max_iter + 1):
        BtP = B.T @ P
        G = R + BtP @ B
        P_next = Q + A.T @ P @ A - (BtP @ A).T @ np.linalg.solve(G, BtP @ A)
        P_next = 0.5 * (P_next + P_next.T)
        step = float(np.max(np.abs(P_next - P)))
        increments.append(step)
        P = P_next
        if not np.all(np.isfinite(P)):
            raise ConvergenceError("Riccati iteration produced non-finite values")
        if step < tol * max(1.0, float(np.max(np.abs(P)))):
            break
    else:
        raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} iterations "
                               f"(last increment {increments[-1]:.3e})")
    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    return DareSolution(P=_frozen(P), K=_frozen(K), iterations=it, increments=tuple(increments))


def design_state_gain(A, B, Q=None, R=None) -> np.ndarray:
    """Riccati-based ``K`` with ``A - B K`` Schur; certified by eigenvalues."""
    A = nm.as_matrix(A, "A")
    B = nm.as_matrix(B, "B", rows=A.shape[0])
    K = np.array(solve_dare_iteration(A, B, Q, R).K)
    if not is_schur(A - B @ K):
        raise SynthesisError(
            f"designed gain fails certification: rho(A - BK) = {nm.spectral_radius(A - B @ K):.12g}")
    return K


def design_observer_gain(A, C, Q=None, R=None) -> np.ndarray:
    """``H`` with ``A - H C`` Schur, from the dual Riccati problem on ``(A', C')``."""
    A = nm.as_matrix(A, "A")
    C = nm.as_matrix(C, "C", cols=A.shape[0])
    bad = pbh_failures(A.T, C.T)
    if bad:
        raise SynthesisError(
            f"(C, A) is not detectable: PBH rank test fails at eigenvalue {bad[0]:.6g}")
    return design_state_gain(A.T, C.T, Q, R).T


@dataclass(frozen=True, eq=False)
class GainSet:
    """Feedback gain ``K`` and observer gain ``H`` with Schur certificates.

    Construction fails unless both ``A - B K`` and ``A - H C`` are Schur.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray
    H: np.ndarray
    rho_feedback: float = field(init=False)
    rho_observer: float = field(init=False)

    def __post_init__(self):
        A = nm.as_matrix(self.A, "A")
        n = A.shape[0]
        B = nm.as_matrix(self.B, "B", rows=n)
        C = nm.as_matrix(self.C, "C", cols=n)
        K = nm.as_matrix(self.K, "K", rows=B.shape[1], cols=n)
        H = nm.as_matrix(self.H, "H", rows=n, cols=C.shape[0])
        for name, val in (("A", A), ("B", B), ("C", C), ("K", K), ("H", H)):
            object.__setattr__(self, name, _frozen(val))
        rho_k = nm.spectral_radius(A - B @ K)
        rho_h = nm.spectral_radius(A - H @ C)
        if not rho_k < 1.0 - nm.UNIT_DISK_TOL:
            raise SynthesisError(f"A - BK is not Schur (spectral radius {rho_k:.12g})")
        if not rho_h < 1.0 - nm.UNIT_DISK_TOL:
            raise SynthesisError(f"A - HC is not Schur (spectral radius {rho_h:.12g})")
        object.__setattr__(self, "rho_feedback", rho_k)
        object.__setattr__(self, "rho_observer", rho_h)


def design_gains(sys: LtiSystem, Q=None, R=None) -> GainSet:
    return GainSet(sys.A, sys.B, sys.C, design_state_gain(sys.A, sys.B, Q, R),
                   design_observer_gain(sys.A, sys.C))


# -- target models -----------------------------------------------------------

def observability_matrix(C, A, steps=None):
    C = np.asarray(C, dtype=float)
    A = np.asarray(A, dtype=float)
    steps = A.shape[0] if steps is None else steps
    rows, CAk = [], C
    for _ in range(steps):
        rows.append(CAk)
        CAk = CAk @ A
    return np.vstack(rows) if rows else np.zeros((0, A.shape[0]))


@dataclass(frozen=True)
class TargetModel:
    """Common model ``(C, A, B)`` the agents are homogenized to."""

    system: LtiSystem
    nq: int

    def __post_init__(self):
        sys = self.system
        if not sys.is_siso:
            raise UnsupportedClassError("only single-output targets are supported")
        rep = analyze(sys)
        if nm.matrix_rank(sys.C) != sys.p:
            raise SynthesisError("target C must have full row rank")
        if rep.uniform_rank != self.nq or sys.n != self.nq:
            raise SynthesisError(f"target must be invertible of uniform rank {self.nq} "
                                 f"with state dimension {self.nq}")
        if rep.invariant_zeros:
            raise SynthesisError(f"target has invariant zeros {rep.invariant_zeros}")
        if not rep.A_in_closed_unit_disk:
            raise SynthesisError("target A has eigenvalues outside the closed unit disk")

    @property
    def gain(self) -> float:
        """Leading Markov parameter ``C A^(nq-1) B``."""
        s = self.system
        return float((s.C @ np.linalg.matrix_power(s.A, self.nq - 1) @ s.B)[0, 0])


def _chain_companion(coeffs):
    """Shift-register realization of ``1 / chi(z)`` with state ``(y(k), ..., y(k+nq-1))``.

    ``coeffs`` are the monic characteristic polynomial coefficients, highest
    power first (``numpy.poly`` convention).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 1 or coeffs.size < 2 or coeffs[0] != 1.0:
        raise SynthesisError("characteristic polynomial must be monic of degree >= 1")
    nq = coeffs.size - 1
    A = np.eye(nq, k=1)
    A[-1, :] = -coeffs[:0:-1] + 0.0  # normalizes -0.0
    B = np.zeros((nq, 1))
    B[-1, 0] = 1.0
    C = np.zeros((1, nq))
    C[0, 0] = 1.0
    return A, B, C


def companion_target(coeffs) -> TargetModel:
    """Target with transfer ``1 / chi(z)`` for the given monic ``chi``."""
    A, B, C = _chain_companion(coeffs)
    return TargetModel(LtiSystem(A, B, C), A.shape[0])


def default_target(nq: int, p: int = 1) -> TargetModel:
    """Chain of ``nq`` delays: transfer ``z^-nq``."""
    if p != 1:
        raise UnsupportedClassError("only p = 1 targets are supported")
    if nq < 1:
        raise SynthesisError("nq must be >= 1")
    return companion_target(np.r_[1.0, np.zeros(nq)])


# -- pre-compensator ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Compensator:
    """``xi+ = Ah xi + Bh z + Eh v``, ``u = Ch xi + Dh v``.

    The interconnection with the agent (state ``(x, xi)``) satisfies
    ``xbar = to_target @ (x, xi)`` with ``xbar+ = A xbar + B (v + Cs omega)``
    and ``omega = to_residual @ (x, xi)`` with ``omega+ = As omega``.
    """

    Ah: np.ndarray
    Bh: np.ndarray
    Ch: np.ndarray
    Dh: np.ndarray
    Eh: np.ndarray
    As: np.ndarray
    Cs: np.ndarray
    to_target: np.ndarray
    to_residual: np.ndarray
    observer_gain: np.ndarray
    zero_dynamics: tuple = ()

    @property
    def order(self) -> int:
        return self.Ah.shape[0]

    @property
    def residual_radius(self) -> float:
        return nm.spectral_radius(self.As)

    def interconnection(self, agent: LtiSystem):
        """``(A_cl, B_cl, C_cl)`` of agent plus compensator, input ``v``, output ``y``."""
        Cm = agent.Cm if agent.Cm is not None else np.zeros((0, agent.n))
        A_cl = np.block([[agent.A, agent.B @ self.Ch],
                         [self.Bh @ Cm, self.Ah]])
        B_cl = np.vstack([agent.B @ self.Dh, self.Eh])
        C_cl = np.hstack([agent.C, np.zeros((agent.p, self.order))])
        return A_cl, B_cl, C_cl


def _identity_compensator(agent: LtiSystem) -> Compensator:
    n, m = agent.n, agent.m
    q = 0 if agent.Cm is None else agent.Cm.shape[0]
    return Compensator(
        Ah=_frozen(np.zeros((0, 0))), Bh=_frozen(np.zeros((0, q))), Ch=_frozen(np.zeros((m, 0))),
        Dh=_frozen(np.eye(m)), Eh=_frozen(np.zeros((0, m))), As=_frozen(np.zeros((0, 0))),
        Cs=_frozen(np.zeros((m, 0))), to_target=_frozen(np.eye(n)),
        to_residual=_frozen(np.zeros((0, n))), observer_gain=_frozen(np.zeros((n, q))))


def _check_supported(agent: LtiSystem, target: TargetModel):
    if not agent.is_siso:
        raise UnsupportedClassError(f"agent must be SISO, got m={agent.m}, p={agent.p}")
    if agent.Cm is None:
        raise UnsupportedClassError("agent has no local measurement matrix Cm")
    rep = analyze(agent)
    if not rep.stabilizable:
        raise UnsupportedClassError(
            f"(A, B) not stabilizable: PBH fails at eigenvalue {rep.unstabilizable_modes[0]:.6g}")
    if not rep.detectable_via_Cm:
        raise UnsupportedClassError("(Cm, A) is not detectable")
    if not rep.right_invertible:
        raise UnsupportedClassError("agent transfer function is identically zero "
                                    "(not right-invertible)")
    if rep.relative_degree > target.nq:
        raise UnsupportedClassError(
            f"relative degree {rep.relative_degree} exceeds target uniform rank {target.nq}")
    unstable = [z for z in rep.invariant_zeros if abs(z) >= 1.0 - nm.UNIT_DISK_TOL]
    if unstable:
        raise UnsupportedClassError(f"agent is not minimum-phase: invariant zero {unstable[0]:.6g}")
    return rep


def design_precompensator(agent: LtiSystem, target: TargetModel, observer_gain=None,
                          check_tol=1e-8) -> Compensator:
    """Homogenize ``agent`` to ``target`` up to a Schur-generated input disturbance."""
    if agent.same_dynamics(target.system):
        return _identity_compensator(agent)
    rep = _check_supported(agent, target)

    Ai, Bi, Ci, Cm = agent.A, agent.B, agent.C, agent.Cm
    At, Bt, Ct = target.system.A, target.system.B, target.system.C
    n, nq, r = agent.n, target.nq, rep.relative_degree
    L = design_observer_gain(Ai, Cm) if observer_gain is None else nm.as_matrix(
        observer_gain, "observer_gain", rows=n, cols=Cm.shape[0])
    F = Ai - L @ Cm
    if not is_schur(F):
        raise SynthesisError("observer gain does not make A_i - L Cm Schur")

    mp = np.linalg.matrix_power
    b0 = float((Ci @ mp(Ai, r - 1) @ Bi)[0, 0])
    lead = float((Ct @ mp(At, r - 1) @ Bt)[0, 0])  # zero unless r == nq

    # u = Ch [xa; s] + Dh v
    Ch = np.hstack([-Ci @ mp(Ai, r), Ct @ mp(At, r)]) / b0
    Dh = np.array([[lead / b0]])
    Ah = np.block([[F + Bi @ Ch[:, :n], Bi @ Ch[:, n:]],
                   [np.zeros((nq, n)), At]])
    Bh = np.vstack([L, np.zeros((nq, Cm.shape[0]))])
    Eh = np.vstack([Bi @ Dh, Bt])

    # maps on the interconnection state X = (x, xa, s)
    eps = np.hstack([np.eye(n), -np.eye(n), np.zeros((n, nq))])
    CiAr = Ci @ mp(Ai, r)
    Y = np.zeros((nq, 2 * n + nq))
    G = np.zeros((nq, r + n))
    for j in range(nq):
        if j < r:
            Y[j, :n] = Ci @ mp(Ai, j)
            G[j, j] = 1.0
        else:
            inj = CiAr @ mp(F, j - r)
            Y[j] = np.hstack([np.zeros((1, 2 * n)), Ct @ mp(At, j)]) + inj @ eps
            G[j, r:] = inj
    O = observability_matrix(Ct, At)
    to_target = np.linalg.solve(O, Y)
    p_rows = np.hstack([np.vstack([Ci @ mp(Ai, j) for j in range(r)]),
                        np.zeros((r, n)),
                        -np.vstack([Ct @ mp(At, j) for j in range(r)])])
    to_residual = np.vstack([p_rows, eps])
    As = np.zeros((r + n, r + n))
    As[:r, :r] = np.eye(r, k=1)
    As[r - 1, r:] = CiAr
    As[r:, r:] = F
    Cs = (np.hstack([np.zeros((1, r)), CiAr @ mp(F, nq - r)])
          - Ct @ mp(At, nq) @ np.linalg.solve(O, G)) / target.gain

    comp = Compensator(
        Ah=_frozen(Ah), Bh=_frozen(Bh), Ch=_frozen(Ch), Dh=_frozen(Dh), Eh=_frozen(Eh),
        As=_frozen(As), Cs=_frozen(Cs), to_target=_frozen(to_target),
        to_residual=_frozen(to_residual), observer_gain=_frozen(L),
        zero_dynamics=tuple(rep.invariant_zeros))
    _certify_homogenization(agent, target, comp, check_tol)
    return comp


def homogenization_defect(agent: LtiSystem, target: TargetModel, comp: Compensator) -> float:
    """Largest violation of the intertwining identities of the compensated agent."""
    A_cl, B_cl, C_cl = comp.interconnection(agent)
    At, Bt, Ct = target.system.A, target.system.B, target.system.C
    Phi, Psi = comp.to_target, comp.to_residual
    defects = [
        Phi @ A_cl - At @ Phi - Bt @ comp.Cs @ Psi,
        Phi @ B_cl - Bt,
        C_cl - Ct @ Phi,
        Psi @ A_cl - comp.As @ Psi,
        Psi @ B_cl,
    ]
    return max((float(np.max(np.abs(d))) for d in defects if d.size), default=0.0)


def _certify_homogenization(agent, target, comp, tol):
    if comp.As.size and not is_schur(comp.As):
        raise SynthesisError(f"residual generator not Schur (rho = {comp.residual_radius:.6g})")
    scale = max(1.0, float(np.max(np.abs(comp.interconnection(agent)[0]))))
    defect = homogenization_defect(agent, target, comp)
    if defect > tol * scale:
        raise ConsistencyError(f"compensated agent does not match the target (defect {defect:.3e})")


# -- exosystem augmentation --------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExosystemSpec:
    """Exosystem ``(Cr, Ar)`` and its uniform-rank augmentation ``(Cr_, Ar_, Br_)``."""

    Ar: np.ndarray
    Cr: np.ndarray
    augmented: LtiSystem
    nq: int
    lift_matrix: np.ndarray

    def lift(self, xr0):
        """Initial state of the augmented exosystem reproducing the same output."""
        return self.lift_matrix @ np.asarray(xr0, dtype=float)

    @property
    def target(self) -> TargetModel:
        return TargetModel(self.augmented, self.nq)


def augment_exosystem(Cr, Ar, nq, max_infinite_zero_order=0, lift_tol=1e-8) -> ExosystemSpec:
    """Augment ``(Cr, Ar)`` to an invertible uniform-rank-``nq`` triple.

    The new generator has characteristic polynomial ``z^(nq - r) chi_Ar(z)``
    in shift-register form, so its state is the next ``nq`` output samples.
    """
    Ar = nm.as_matrix(Ar, "Ar")
    r = Ar.shape[0]
    Cr = nm.as_matrix(Cr, "Cr", cols=r)
    if Cr.shape[0] != 1:
        raise UnsupportedClassError("only single-output exosystems are supported")
    obs = observability_matrix(Cr, Ar)
    if nm.matrix_rank(obs) < r:
        raise SynthesisError("(Cr, Ar) is not observable")
    if nm.spectral_radius(Ar) > 1.0 + nm.UNIT_DISK_TOL:
        raise SynthesisError("exosystem has eigenvalues outside the closed unit disk")
    bound = max(r, int(max_infinite_zero_order))
    if nq < bound:
        raise SynthesisError(f"nq = {nq} too small: must be >= max(observability index {r}, "
                             f"maximal infinite-zero order {max_infinite_zero_order})")
    chi = np.real(np.poly(Ar)) if r else np.ones(1)
    coeffs = np.polymul(np.r_[1.0, np.zeros(nq - r)], chi)
    A_aug, B_aug, C_aug = _chain_companion(coeffs)
    target_obs = observability_matrix(C_aug, A_aug)
    rhs = observability_matrix(Cr, Ar, nq)
    lift, *_ = np.linalg.lstsq(target_obs, rhs, rcond=None)
    resid = float(np.max(np.abs(target_obs @ lift - rhs))) if rhs.size else 0.0
    if resid > lift_tol:
        raise ConsistencyError(f"exosystem lift residual {resid:.3e} exceeds {lift_tol}")
    return ExosystemSpec(Ar=_frozen(Ar), Cr=_frozen(Cr), augmented=LtiSystem(A_aug, B_aug, C_aug),
                         nq=int(nq), lift_matrix=_frozen(lift))


# -- serialization -----------------------------------------------------------

def gains_to_dict(g: GainSet) -> dict:
    return {
        "K": nm.dump_matrix(g.K),
        "H": nm.dump_matrix(g.H),
        "certificates": {
            "spectral_radius_A_minus_BK": nm.format_decimal(g.rho_feedback),
            "spectral_radius_A_minus_HC": nm.format_decimal(g.rho_observer),
        },
    }


def compensator_to_dict(c: Compensator) -> dict:
    out = {k: nm.dump_matrix(getattr(c, k)) for k in
           ("Ah", "Bh", "Ch", "Dh", "Eh", "As", "Cs", "to_target", "to_residual", "observer_gain")}
    out["certificates"] = {
        "spectral_radius_As": nm.format_decimal(c.residual_radius),
        "zero_dynamics": [[nm.format_decimal(z.real), nm.format_decimal(z.imag)]
                          for z in c.zero_dynamics],
    }
    return out


def exosystem_to_dict(e: ExosystemSpec) -> dict:
    return {
        "Ar": nm.dump_matrix(e.Ar),
        "Cr": nm.dump_matrix(e.Cr),
        "nq": e.nq,
        "augmented": {"A": nm.dump_matrix(e.augmented.A), "B": nm.dump_matrix(e.augmented.B),
                      "C": nm.dump_matrix(e.augmented.C)},
        "lift": nm.dump_matrix(e.lift_matrix),
        "certificates": {
            "spectral_radius_Ar": nm.format_decimal(nm.spectral_radius(e.Ar)),
        },
    }


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
