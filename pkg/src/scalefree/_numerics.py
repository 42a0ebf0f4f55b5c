"""Small numerical helpers used across modules.

Eigenvalues come from LAPACK ``geev`` through :func:`numpy.linalg.eigvals`
(balancing, Hessenberg reduction and shifted QR). Rank decisions use
singular values thresholded relative to the largest one.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, EigenvalueError

#: Tolerance on ``|lambda| - 1`` for strict unit-disk membership.
UNIT_DISK_TOL = 1e-9
#: Relative singular-value threshold for rank decisions.
RANK_TOL = 1e-9


def as_matrix(value, name="matrix", rows=None, cols=None):
    """Return ``value`` as a 2-D float array, checking shape if asked.

    Scalars become 1x1 and 1-D input becomes a single row.
    """
    arr = np.array(value, dtype=float, ndmin=2)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite entries")
    return arr


def eigenvalues(M) -> np.ndarray:
    """Eigenvalues of a real square matrix, sorted for reproducibility.

    Raises :class:`EigenvalueError` when LAPACK reports non-convergence.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    try:
        lam = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise EigenvalueError(f"eigenvalue iteration did not converge: {exc}") from exc
    lam = np.asarray(lam, dtype=complex)
    return lam[np.lexsort((lam.imag, lam.real))]


def spectral_radius(M) -> float:
    lam = eigenvalues(M)
    return float(np.max(np.abs(lam))) if lam.size else 0.0


def in_unit_disk(M, tol=UNIT_DISK_TOL) -> bool:
    """True iff every eigenvalue satisfies ``|lambda| < 1 - tol``."""
    return spectral_radius(M) < 1.0 - tol


def matrix_rank(M, tol=RANK_TOL) -> int:
    M = np.asarray(M)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def match_spectra(a, b) -> float:
    """Greedy minimal-distance matching of two eigenvalue multisets.

    Returns the largest distance among matched pairs; ``inf`` when the
    multisets differ in size.
    """
    a = list(np.asarray(a, dtype=complex))
    b = list(np.asarray(b, dtype=complex))
    if len(a) != len(b):
        return float("inf")
    worst = 0.0
    while a:
        dist = np.abs(np.subtract.outer(np.array(a), np.array(b)))
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        worst = max(worst, float(dist[i, j]))
        a.pop(i)
        b.pop(j)
    return worst


def format_decimal(x: float) -> str:
    """Shortest decimal string that parses back to the same double."""
    return repr(float(x))


def parse_decimal(value) -> float:
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        return float(value.strip())
    raise ValueError(f"expected a number or decimal string, got {value!r}")


def parse_matrix(rows, name="matrix"):
    """Row-major list of lists of numbers/decimal strings -> 2-D array."""
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ValueError(f"{name} must be a non-empty list of rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{name} has ragged rows")
    return np.array([[parse_decimal(v) for v in r] for r in rows], dtype=float).reshape(len(rows), width)


def dump_matrix(M):
    return [[format_decimal(v) for v in row] for row in np.asarray(M, dtype=float)]
