"""Small dense SPD helpers used by the filters.

Every inversion of a symmetric positive definite matrix goes through a
Cholesky factorization; no explicit inverse is exposed.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NonFiniteValue, NotPositiveDefinite

SYMMETRY_RTOL = 1e-9
PIVOT_FLOOR = 0.0
SOLVE_RTOL = 1e-10
PSD_FLOOR_RTOL = 1e-10


def as_vector(x, name="vector") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteValue(f"{name} has non-finite entries")
    return v


def as_matrix(m, name="matrix") -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be two-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"{name} has non-finite entries")
    return a


def _require_square(m: np.ndarray, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")


def is_symmetric(m: np.ndarray, rtol: float = SYMMETRY_RTOL) -> bool:
    scale = max(float(np.max(np.abs(m))) if m.size else 0.0, 1.0)
    return bool(np.max(np.abs(m - m.T), initial=0.0) <= rtol * scale)


def symmetrize(m) -> np.ndarray:
    """Return ``(M + M^T) / 2``; the result equals its own transpose exactly."""
    m = np.asarray(m, dtype=float)
    _require_square(m, "matrix")
    return 0.5 * (m + m.T)


def cholesky(m, name="matrix") -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix.

    Raises NotPositiveDefinite when a pivot is not strictly positive, or
    when ``m`` is not symmetric to within ``SYMMETRY_RTOL``.
    """
    m = as_matrix(m, name)
    _require_square(m, name)
    if not is_symmetric(m):
        raise NotPositiveDefinite(f"{name} is not symmetric")
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"{name} is not positive definite") from exc
    if not np.all(np.diag(low) > PIVOT_FLOOR):
        raise NotPositiveDefinite(f"{name} is not positive definite")
    return low


def cho_solve(low: np.ndarray, rhs) -> np.ndarray:
    """Solve ``L L^T X = rhs`` given the lower factor ``L``."""
    z = solve_triangular(low, rhs, lower=True, check_finite=False)
    return solve_triangular(low.T, z, lower=False, check_finite=False)


def solve_spd(m, rhs) -> np.ndarray:
    """Solve ``M X = RHS`` for symmetric positive definite ``M``."""
    low = cholesky(m)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != low.shape[0]:
        raise DimensionMismatch(
            f"right-hand side has {rhs.shape[0]} rows, matrix is {low.shape[0]}x{low.shape[0]}"
        )
    return cho_solve(low, rhs)


def log_det_spd(m) -> float:
    low = cholesky(m)
    return float(2.0 * np.sum(np.log(np.diag(low))))


def is_psd(m, rtol: float = PSD_FLOOR_RTOL) -> bool:
    """Cholesky-based PSD test with pivot floor ``-rtol * trace``.

    Shifting by ``rtol * trace`` lets exactly singular covariances (zero
    noise, rank-1 process noise) pass while rejecting genuinely negative
    directions.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.all(np.isfinite(m)):
        return False
    if not is_symmetric(m):
        return False
    tr = float(np.trace(m))
    if tr < 0.0:
        return False
    shift = rtol * tr + np.finfo(float).tiny
    try:
        np.linalg.cholesky(m + shift * np.eye(m.shape[0]))
    except np.linalg.LinAlgError:
        return False
    return True


def psd_factor(m) -> np.ndarray:
    """Return ``G`` with ``G G^T = M`` for a symmetric PSD ``M``.

    Outer-product Cholesky that skips pivots below the PSD floor, so
    singular matrices (rank-1 process noise) are supported.
    """
    a = symmetrize(as_matrix(m))
    n = a.shape[0]
    floor = PSD_FLOOR_RTOL * max(float(np.trace(a)), 0.0)
    g = np.zeros((n, n))
    work = a.copy()
    for k in range(n):
        pivot = work[k, k]
        if pivot < -floor:
            raise NotPositiveDefinite("matrix is not positive semidefinite")
        if pivot <= floor:
            continue
        col = work[:, k] / np.sqrt(pivot)
        col[:k] = 0.0
        g[:, k] = col
        work -= np.outer(col, col)
    return g
