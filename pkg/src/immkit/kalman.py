"""The elementary discrete-time Kalman filter."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, InvalidParameter, NotPositiveDefinite, SingularInnovationCovariance
from .linalg import as_vector, cho_solve, cholesky, symmetrize
from .models import FILTERED, PREDICTED, GaussianState, StateSpaceModel

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class Innovation:
    residual: np.ndarray
    cov: np.ndarray
    predicted_measurement: np.ndarray
    chol: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.residual.size


def _expect_tag(state: GaussianState, tag: str) -> None:
    if state.tag != tag:
        raise InvalidParameter(f"expected a {tag} state, got {state.tag}")


def predict(model: StateSpaceModel, state: GaussianState, u=None) -> GaussianState:
    """Propagate a filtered estimate one step: ``A x + B u``, ``A C A^T + Q``."""
    _expect_tag(state, FILTERED)
    if state.dim != model.dim:
        raise DimensionMismatch(f"state has dim {state.dim}, model {model.name} has {model.dim}")
    mean = model.A @ state.mean
    if u is not None:
        u = as_vector(u, "u")
        if u.size != model.B.shape[1]:
            raise DimensionMismatch(f"u has dim {u.size}, B has {model.B.shape[1]} columns")
        mean = mean + model.B @ u
    cov = symmetrize(model.A @ state.cov @ model.A.T + model.Q)
    return GaussianState(mean, cov, state.time_index + 1, PREDICTED)


def innovate(model: StateSpaceModel, predicted: GaussianState, y) -> Innovation:
    _expect_tag(predicted, PREDICTED)
    y = as_vector(y, "y")
    if y.size != model.meas_dim:
        raise DimensionMismatch(f"measurement has dim {y.size}, model expects {model.meas_dim}")
    if predicted.dim != model.dim:
        raise DimensionMismatch(f"state has dim {predicted.dim}, model {model.name} has {model.dim}")
    y_hat = model.H @ predicted.mean
    S = symmetrize(model.R + model.H @ predicted.cov @ model.H.T)
    try:
        low = cholesky(S, "innovation covariance")
    except NotPositiveDefinite as exc:
        raise SingularInnovationCovariance(str(exc)) from exc
    return Innovation(residual=y - y_hat, cov=S, predicted_measurement=y_hat, chol=low)


def update(model: StateSpaceModel, predicted: GaussianState, y,
           innovation: Optional[Innovation] = None) -> GaussianState:
    """Measurement update with the short-form covariance ``C - K H C``."""
    inn = innovation if innovation is not None else innovate(model, predicted, y)
    low = inn.chol if inn.chol is not None else cholesky(inn.cov, "innovation covariance")
    HC = model.H @ predicted.cov
    gain = cho_solve(low, HC).T
    mean = predicted.mean + gain @ inn.residual
    cov = symmetrize(predicted.cov - gain @ HC)
    return GaussianState(mean, cov, predicted.time_index, FILTERED)


def log_likelihood(inn: Innovation) -> float:
    """Log density of the residual under ``N(0, S)``.

    Returns ``-inf`` when the Mahalanobis term overflows rather than raising,
    so the mode-probability recursion can report degenerate likelihoods.
    """
    try:
        low = inn.chol if inn.chol is not None else cholesky(inn.cov, "innovation covariance")
    except NotPositiveDefinite as exc:
        raise SingularInnovationCovariance(str(exc)) from exc
    with np.errstate(over="ignore"):
        z = solve_triangular(low, inn.residual, lower=True, check_finite=False)
        maha = float(z @ z)
    log_det = 2.0 * float(np.sum(np.log(np.diag(low))))
    return -0.5 * (inn.dim * LOG_2PI + log_det + maha)


def filter_step(model: StateSpaceModel, state: GaussianState, y, u=None):
    """Predict then update; returns ``(filtered, innovation, log_likelihood)``."""
    pred = predict(model, state, u)
    inn = innovate(model, pred, y)
    return update(model, pred, y, inn), inn, log_likelihood(inn)


def run_filter(model: StateSpaceModel, initial: GaussianState, measurements):
    """Run a single Kalman filter over a measurement sequence."""
    out = []
    state = initial
    for y in measurements:
        state, _, _ = filter_step(model, state, y)
        out.append(state)
    return out
