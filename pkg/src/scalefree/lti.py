"""Discrete-time LTI containers and structural tests.

All rank decisions threshold singular values at ``RANK_TOL`` times the
largest one. Markov parameters ``C A^k B`` are scanned up to ``k < 2n``;
past that a SISO transfer function is identically zero (Cayley-Hamilton).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import _numerics as nm
from .errors import DimensionError

__all__ = ["LtiSystem", "StructureReport", "analyze", "is_schur", "markov_parameters",
           "relative_degree", "invariant_zeros", "pbh_failures", "load_system", "dump_system"]


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """``x+ = A x + B u``, ``y = C x``, optional local measurement ``z = Cm x``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Cm: np.ndarray | None = None

    def __post_init__(self):
        A = nm.as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        B = nm.as_matrix(self.B, "B", rows=n)
        C = nm.as_matrix(self.C, "C", cols=n)
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "C", _frozen(C))
        if self.Cm is not None:
            object.__setattr__(self, "Cm", _frozen(nm.as_matrix(self.Cm, "Cm", cols=n)))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def is_siso(self) -> bool:
        return self.m == 1 and self.p == 1

    def same_dynamics(self, other: "LtiSystem", atol=0.0) -> bool:
        """Equal ``(A, B, C)`` triples; ``Cm`` is ignored."""
        return all(a.shape == b.shape and np.allclose(a, b, rtol=0.0, atol=atol)
                   for a, b in ((self.A, other.A), (self.B, other.B), (self.C, other.C)))

    def __eq__(self, other):
        if not isinstance(other, LtiSystem):
            return NotImplemented
        if (self.Cm is None) != (other.Cm is None):
            return False
        cm_equal = self.Cm is None or (self.Cm.shape == other.Cm.shape
                                       and np.array_equal(self.Cm, other.Cm))
        return self.same_dynamics(other) and cm_equal

    __hash__ = None


@dataclass(frozen=True)
class StructureReport:
    stabilizable: bool
    detectable: bool
    detectable_via_Cm: bool | None
    invariant_zeros: tuple
    relative_degree: int | None
    uniform_rank: int | None
    right_invertible: bool | None  # None = undetermined (MIMO outside the uniform-rank test)
    eigenvalues_of_A: tuple
    A_in_closed_unit_disk: bool
    unstabilizable_modes: tuple = ()
    undetectable_modes: tuple = ()


def is_schur(M, tol=nm.UNIT_DISK_TOL) -> bool:
    """All eigenvalues strictly inside the unit circle (margin ``tol``)."""
    return nm.in_unit_disk(M, tol)


def pbh_failures(A, B, tol=nm.UNIT_DISK_TOL, rank_tol=nm.RANK_TOL):
    """Eigenvalues ``|lambda| >= 1 - tol`` at which ``[A - lambda I, B]`` loses rank."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    bad = []
    for lam in nm.eigenvalues(A):
        if abs(lam) < 1.0 - tol:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        if nm.matrix_rank(pencil, rank_tol) < n:
            bad.append(complex(lam))
    return bad


def markov_parameters(sys: LtiSystem, count=None):
    """``[C B, C A B, ..., C A^(count-1) B]`` (default ``count = 2n``)."""
    count = 2 * sys.n if count is None else count
    out = []
    AkB = sys.B.copy()
    for _ in range(count):
        out.append(sys.C @ AkB)
        AkB = sys.A @ AkB
    return out


def _first_nonzero_markov(sys: LtiSystem, rank_tol=nm.RANK_TOL):
    """Index ``r >= 1`` and value of the first Markov parameter that is not zero."""
    normA = np.linalg.norm(sys.A, 2)
    scale = np.linalg.norm(sys.C, 2) * np.linalg.norm(sys.B, 2)
    for k, h in enumerate(markov_parameters(sys), start=1):
        bound = scale * normA ** (k - 1)
        if bound > 0 and np.max(np.abs(h)) > rank_tol * bound:
            return k, h
    return None, None


def relative_degree(sys: LtiSystem) -> int | None:
    """Smallest ``r`` with ``C A^(r-1) B != 0``; ``None`` if the transfer is zero."""
    r, _ = _first_nonzero_markov(sys)
    return r


def invariant_zeros(sys: LtiSystem, rank_tol=nm.RANK_TOL) -> tuple:
    """Finite ``z`` where the Rosenbrock pencil ``[[zI - A, -B], [C, 0]]`` drops rank.

    Square systems: generalized eigenvalues of ``([[A, B], [C, 0]], diag(I, 0))``.
    Non-square systems are compressed to square with a fixed random
    projection and each candidate is re-checked against the original pencil.
    """
    n, m, p = sys.n, sys.m, sys.p
    A, B, C = sys.A, sys.B, sys.C

    def pencil(z, Bq, Cq):
        return np.block([[z * np.eye(n) - A, -Bq], [Cq, np.zeros((Cq.shape[0], Bq.shape[1]))]])

    def normal_rank(Bq, Cq):
        probes = (0.3141 + 0.2718j, -0.577 + 0.1414j)
        return max(nm.matrix_rank(pencil(z, Bq, Cq), rank_tol) for z in probes)

    if m == p:
        Bq, Cq = B, C
    else:
        rng = np.random.Generator(np.random.PCG64(20200101))
        k = min(m, p)
        Bq = B if m == k else B @ rng.standard_normal((m, k))
        Cq = C if p == k else rng.standard_normal((k, p)) @ C
    if normal_rank(Bq, Cq) < n + Bq.shape[1]:
        # degenerate square pencil (e.g. zero transfer); no finite zeros reported
        return ()
    k = Bq.shape[1]
    M = np.block([[A, Bq], [Cq, np.zeros((k, k))]])
    E = np.block([[np.eye(n), np.zeros((n, k))], [np.zeros((k, n)), np.zeros((k, k))]])
    alpha, beta = sla.eigvals(M, E, homogeneous_eigvals=True)
    finite = np.abs(beta) > 1e-10 * np.maximum(1.0, np.abs(alpha))
    zeros = alpha[finite] / beta[finite]
    if m != p:
        full = normal_rank(B, C)
        zeros = [z for z in zeros if nm.matrix_rank(pencil(z, B, C), 1e-7) < full]
    zeros = np.asarray(zeros, dtype=complex)
    zeros = zeros[np.lexsort((zeros.imag, zeros.real))] if zeros.size else zeros
    return tuple(complex(z) for z in zeros)


def analyze(sys: LtiSystem, tol=nm.UNIT_DISK_TOL, rank_tol=nm.RANK_TOL) -> StructureReport:
    lam = nm.eigenvalues(sys.A)
    unstab = pbh_failures(sys.A, sys.B, tol, rank_tol)
    undet = pbh_failures(sys.A.T, sys.C.T, tol, rank_tol)
    det_cm = None if sys.Cm is None else not pbh_failures(sys.A.T, sys.Cm.T, tol, rank_tol)
    r, h = _first_nonzero_markov(sys, rank_tol)

    rel_deg = r if sys.is_siso else None
    uniform = None
    right_inv = None
    if r is not None and h.shape[0] == h.shape[1] and nm.matrix_rank(h, rank_tol) == h.shape[0]:
        uniform = r
    if sys.is_siso:
        right_inv = r is not None
    elif r is not None and nm.matrix_rank(h, rank_tol) == sys.p:
        right_inv = True
    elif r is None:
        right_inv = False

    return StructureReport(
        stabilizable=not unstab,
        detectable=not undet,
        detectable_via_Cm=det_cm,
        invariant_zeros=invariant_zeros(sys, rank_tol),
        relative_degree=rel_deg,
        uniform_rank=uniform,
        right_invertible=right_inv,
        eigenvalues_of_A=tuple(complex(v) for v in lam),
        A_in_closed_unit_disk=bool(lam.size == 0 or np.max(np.abs(lam)) <= 1.0 + tol),
        unstabilizable_modes=tuple(unstab),
        undetectable_modes=tuple(undet),
    )


# -- file format -------------------------------------------------------------

_SYSTEM_KEYS = {"A", "B", "C", "Cm"}


def system_from_dict(obj, allowed_extra=()) -> LtiSystem:
    if not isinstance(obj, dict):
        raise DimensionError("system must be a JSON object")
    unknown = set(obj) - _SYSTEM_KEYS - set(allowed_extra)
    if unknown:
        raise DimensionError(f"unknown system keys: {sorted(unknown)}")
    missing = {"A", "B", "C"} - set(obj)
    if missing:
        raise DimensionError(f"system is missing {sorted(missing)}")
    mats = {k: nm.parse_matrix(obj[k], k) for k in ("A", "B", "C")}
    cm = nm.parse_matrix(obj["Cm"], "Cm") if obj.get("Cm") is not None else None
    return LtiSystem(mats["A"], mats["B"], mats["C"], cm)


def system_to_dict(sys: LtiSystem) -> dict:
    out = {"A": nm.dump_matrix(sys.A), "B": nm.dump_matrix(sys.B), "C": nm.dump_matrix(sys.C)}
    if sys.Cm is not None:
        out["Cm"] = nm.dump_matrix(sys.Cm)
    return out


def load_system(path) -> LtiSystem:
    return system_from_dict(json.loads(Path(path).read_text()))


def dump_system(sys: LtiSystem, path=None) -> str:
    text = json.dumps(system_to_dict(sys), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
