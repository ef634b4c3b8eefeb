"""Estimation quality measures: RMSE, NEES and chi-square consistency bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, InvalidParameter, NotPositiveDefinite, SingularCovariance
from .linalg import cho_solve, cholesky

QUANTILE_ATOL = 1e-9
QUANTILE_RTOL = 1e-13
NEES_REGULARIZATION = 1e-12


def rmse(errors) -> np.ndarray:
    """Root mean squared error over runs (axis 0), per step and component."""
    e = np.asarray(errors, dtype=float)
    if e.ndim == 0 or e.shape[0] == 0:
        raise EmptyInput("rmse needs at least one run")
    return np.sqrt(np.mean(e * e, axis=0))


def nees(estimate, truth, *, with_flag: bool = False):
    """Normalized estimation error squared ``(x - m)^T C^-1 (x - m)``.

    ``estimate`` is a GaussianState or a ``(mean, cov)`` pair. When the
    covariance is not positive definite it is regularized by
    ``1e-12 * trace * I``; ``with_flag=True`` also returns whether that
    happened.
    """
    if hasattr(estimate, "mean"):
        mean, cov = estimate.mean, estimate.cov
    else:
        mean, cov = estimate
    err = np.asarray(truth, dtype=float) - np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    regularized = False
    try:
        low = cholesky(cov, "covariance")
    except NotPositiveDefinite:
        regularized = True
        tr = float(np.trace(cov))
        try:
            low = cholesky(cov + NEES_REGULARIZATION * max(tr, 0.0) * np.eye(cov.shape[0]), "covariance")
        except NotPositiveDefinite as exc:
            raise SingularCovariance("covariance is singular even after regularization") from exc
    value = float(err @ cho_solve(low, err))
    value = max(value, 0.0)
    return (value, regularized) if with_flag else value


def nees_batch(errors: np.ndarray, covs: np.ndarray):
    """NEES for stacked errors ``(..., n)`` and covariances ``(..., n, n)``.

    Returns ``(values, n_regularized)``. Entries whose covariance fails the
    batched factorization fall back to :func:`nees`.
    """
    errors = np.asarray(errors, dtype=float)
    covs = np.asarray(covs, dtype=float)
    try:
        low = np.linalg.cholesky(covs)
        z = np.linalg.solve(low, errors[..., None])[..., 0]
        return np.einsum("...i,...i->...", z, z), 0
    except np.linalg.LinAlgError:
        pass
    flat_e = errors.reshape(-1, errors.shape[-1])
    flat_c = covs.reshape(-1, *covs.shape[-2:])
    out = np.empty(flat_e.shape[0])
    n_reg = 0
    for k in range(out.size):
        out[k], reg = nees((np.zeros_like(flat_e[k]), flat_c[k]), flat_e[k], with_flag=True)
        n_reg += reg
    return out.reshape(errors.shape[:-1]), n_reg


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma ``P(a, x)``.

    Power series below ``x < a + 1``, modified Lentz continued fraction for
    the upper tail otherwise.
    """
    if a <= 0:
        raise InvalidParameter("shape a must be positive")
    if x <= 0:
        return 0.0
    log_prefactor = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        ap = a
        for _ in range(100000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        return min(1.0, total * math.exp(log_prefactor))
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 100000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return max(0.0, 1.0 - math.exp(log_prefactor) * h)


def chi2_cdf(x: float, dof: float) -> float:
    return gammainc_lower(dof / 2.0, x / 2.0)


def chi2_quantile(p: float, dof: float, atol: float = QUANTILE_ATOL) -> float:
    """Inverse chi-square CDF by bisection on the incomplete gamma function.

    The bracket is narrowed until it is below ``atol`` and also below a
    relative ``QUANTILE_RTOL``, which matters for small quantiles of low
    degrees of freedom where the CDF is steep.
    """
    if not 0.0 < p < 1.0:
        raise InvalidParameter(f"probability must lie in (0, 1), got {p}")
    if dof <= 0:
        raise InvalidParameter("degrees of freedom must be positive")
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < p:
        lo, hi = hi, 2.0 * hi
    while hi - lo > min(atol, QUANTILE_RTOL * hi):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if chi2_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class NeesInterval:
    lower: float
    upper: float
    dim: int
    runs: int
    level: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def straddles_dim(self) -> bool:
        return 0.0 < self.lower < self.dim < self.upper


def nees_interval(dim: int, runs: int, level: float = 0.95) -> NeesInterval:
    """Two-sided acceptance region for the run-averaged NEES.

    ``runs * mean_nees`` is chi-square with ``runs * dim`` degrees of
    freedom for a consistent filter.
    """
    if int(dim) != dim or dim < 1:
        raise InvalidParameter(f"dim must be a positive integer, got {dim}")
    if int(runs) != runs or runs < 1:
        raise InvalidParameter(f"runs must be a positive integer, got {runs}")
    if not 0.0 < level < 1.0:
        raise InvalidParameter(f"level must lie in (0, 1), got {level}")
    dof = dim * runs
    alpha = 1.0 - level
    lower = chi2_quantile(alpha / 2.0, dof) / runs
    upper = chi2_quantile(1.0 - alpha / 2.0, dof) / runs
    return NeesInterval(lower, upper, int(dim), int(runs), float(level))
