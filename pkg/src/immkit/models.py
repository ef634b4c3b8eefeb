"""Linear-Gaussian mode descriptions, the CV/CA kinematic models and model sets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, NotStochastic
from .linalg import as_matrix, as_vector, is_psd, is_symmetric, symmetrize

ROLES = ("position", "velocity", "acceleration")
STOCHASTIC_ATOL = 1e-12
PREDICTED = "predicted"
FILTERED = "filtered"


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """One mode ``x+ = A x + B u + w``, ``y = H x + e``.

    ``Q`` is the process-noise covariance already expressed in state space.
    ``W`` is the covariance of the scalar/vector noise that enters through
    ``B``; it is only used to draw ground truth and may be ``None`` for
    custom models, in which case truth noise is drawn from ``Q`` directly.
    """

    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    name: str = "model"
    W: Optional[np.ndarray] = None
    roles: tuple = ()

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float)
        B = as_matrix(B.reshape(-1, 1) if B.ndim == 1 else B, "B")
        if B.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got {B.shape}")
        H = as_matrix(self.H, "H")
        if H.shape[1] != n:
            raise DimensionMismatch(f"H must have {n} columns, got {H.shape}")
        Q = as_matrix(self.Q, "Q")
        if Q.shape != (n, n):
            raise DimensionMismatch(f"Q must be {n}x{n}, got {Q.shape}")
        if not is_psd(Q):
            raise InvalidParameter("Q must be symmetric positive semidefinite")
        d = H.shape[0]
        R = as_matrix(self.R, "R")
        if R.shape != (d, d):
            raise DimensionMismatch(f"R must be {d}x{d}, got {R.shape}")
        if not is_symmetric(R):
            raise InvalidParameter("R must be symmetric")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise InvalidParameter("R must be positive definite") from None
        W = self.W
        if W is not None:
            W = as_matrix(W, "W")
            if W.shape != (B.shape[1], B.shape[1]) or not is_psd(W):
                raise InvalidParameter("W must be a PSD matrix matching the columns of B")
        roles = tuple(self.roles) if self.roles else ROLES[:n] if n <= 3 else ()
        if roles and len(roles) != n:
            raise DimensionMismatch(f"roles has {len(roles)} entries for a {n}-state model")
        for attr, value in zip("ABHQRW", (A, B, H, Q, R, W)):
            if value is not None:
                value.setflags(write=False)
            object.__setattr__(self, attr, value)
        object.__setattr__(self, "roles", roles)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def meas_dim(self) -> int:
        return self.H.shape[0]


def _check_times(T, sigma_w2, sigma_e2):
    if not np.isfinite(T) or T <= 0:
        raise InvalidParameter(f"sampling interval T must be > 0, got {T}")
    if not np.isfinite(sigma_w2) or sigma_w2 < 0:
        raise InvalidParameter(f"sigma_w2 must be >= 0, got {sigma_w2}")
    if not np.isfinite(sigma_e2) or sigma_e2 <= 0:
        raise InvalidParameter(f"sigma_e2 must be > 0, got {sigma_e2}")


def cv_model(T: float = 1.0, sigma_w2: float = 1.0, sigma_e2: float = 1.0,
             q_form: str = "tabulated") -> StateSpaceModel:
    """Constant-velocity model with state ``(s, v)`` and position measurement.

    ``q_form="tabulated"`` uses ``[[T^4/4, T^3/3], [T^3/3, T^2]] * sigma_w2``;
    ``q_form="outer"`` uses the rank-1 ``B sigma_w2 B^T`` whose off-diagonal
    is ``T^3/2``.
    """
    _check_times(T, sigma_w2, sigma_e2)
    A = np.array([[1.0, T], [0.0, 1.0]])
    B = np.array([[T * T / 2.0], [T]])
    if q_form == "tabulated":
        Q = np.array([[T**4 / 4.0, T**3 / 3.0], [T**3 / 3.0, T**2]]) * sigma_w2
    elif q_form == "outer":
        Q = (B * sigma_w2) @ B.T
    else:
        raise InvalidParameter(f"unknown q_form {q_form!r}")
    return StateSpaceModel(A=A, B=B, H=np.array([[1.0, 0.0]]), Q=Q,
                           R=np.array([[float(sigma_e2)]]), name="CV",
                           W=np.array([[float(sigma_w2)]]), roles=ROLES[:2])


def ca_model(T: float = 1.0, sigma_w2: float = 1.0, sigma_e2: float = 1.0) -> StateSpaceModel:
    """Constant-acceleration model with state ``(s, v, a)``."""
    _check_times(T, sigma_w2, sigma_e2)
    A = np.array([[1.0, T, T * T / 2.0], [0.0, 1.0, T], [0.0, 0.0, 1.0]])
    B = np.array([[T * T / 2.0], [T], [1.0]])
    Q = (B * sigma_w2) @ B.T
    return StateSpaceModel(A=A, B=B, H=np.array([[1.0, 0.0, 0.0]]), Q=Q,
                           R=np.array([[float(sigma_e2)]]), name="CA",
                           W=np.array([[float(sigma_w2)]]), roles=ROLES)


@dataclass(frozen=True, eq=False)
class ModelSet:
    models: tuple
    transition: np.ndarray
    lifts: tuple
    fused_dim: int
    augmentation_variance: float = 0.0
    fused_roles: tuple = field(default=())

    @property
    def r(self) -> int:
        return len(self.models)

    @property
    def meas_dim(self) -> int:
        return self.models[0].meas_dim

    def role_index(self, role: str) -> Optional[int]:
        return self.fused_roles.index(role) if role in self.fused_roles else None


def check_stochastic(transition, r: Optional[int] = None) -> np.ndarray:
    p = as_matrix(transition, "transition")
    if p.shape[0] != p.shape[1] or (r is not None and p.shape[0] != r):
        raise DimensionMismatch(f"transition must be {r}x{r}, got {p.shape}")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise NotStochastic("transition entries must lie in [0, 1]")
    sums = p.sum(axis=1)
    for j, s in enumerate(sums):
        if abs(s - 1.0) > STOCHASTIC_ATOL:
            raise NotStochastic(f"transition row {j} sums to {s:.12g}, not 1")
    return p


def _lift_for(model: StateSpaceModel, fused_roles: tuple, fused_dim: int) -> np.ndarray:
    n = model.dim
    T = np.zeros((fused_dim, n))
    if model.roles and fused_roles and set(model.roles) <= set(fused_roles):
        for col, role in enumerate(model.roles):
            T[fused_roles.index(role), col] = 1.0
    else:
        T[:n, :n] = np.eye(n)
    return T


def make_model_set(models: Sequence[StateSpaceModel], transition,
                   augmentation_variance: float = 0.0) -> ModelSet:
    """Bind modes to a Markov transition matrix and a common fused space.

    The fused space has the largest model dimension. Each model is
    embedded by matching state roles (position, velocity, acceleration);
    components a model lacks are zero in its lifted mean and carry
    ``augmentation_variance`` in its lifted covariance.
    """
    models = tuple(models)
    if not models:
        raise InvalidParameter("model set needs at least one model")
    d = models[0].meas_dim
    for m in models:
        if m.meas_dim != d:
            raise DimensionMismatch("all models must share the measurement dimension")
    p = check_stochastic(transition, len(models))
    if not np.isfinite(augmentation_variance) or augmentation_variance < 0:
        raise InvalidParameter("augmentation_variance must be >= 0")
    widest = max(models, key=lambda m: m.dim)
    fused_dim = widest.dim
    fused_roles = widest.roles
    lifts = tuple(_lift_for(m, fused_roles, fused_dim) for m in models)
    for T in lifts:
        if not np.allclose(T.T @ T, np.eye(T.shape[1]), atol=1e-12):
            raise DimensionMismatch("model roles do not embed into the fused space")
        T.setflags(write=False)
    p = p.copy()
    p.setflags(write=False)
    return ModelSet(models=models, transition=p, lifts=lifts, fused_dim=fused_dim,
                    augmentation_variance=float(augmentation_variance),
                    fused_roles=fused_roles)


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Mean and covariance at time ``time_index``; ``tag`` is predicted or filtered."""

    mean: np.ndarray
    cov: np.ndarray
    time_index: int = 0
    tag: str = FILTERED

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        cov = as_matrix(self.cov, "cov")
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"cov must be {mean.size}x{mean.size}, got {cov.shape}")
        if self.tag not in (PREDICTED, FILTERED):
            raise InvalidParameter(f"tag must be 'predicted' or 'filtered', got {self.tag!r}")
        if not is_psd(cov):
            raise InvalidParameter("cov must be symmetric positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def lift_state(T: np.ndarray, mean: np.ndarray, cov: np.ndarray, aug: float):
    """Embed a native-space moment pair into the fused space."""
    m = T @ mean
    c = T @ cov @ T.T
    if aug and T.shape[0] != T.shape[1]:
        c = c + aug * (np.eye(T.shape[0]) - T @ T.T)
    return m, c


def project_state(T: np.ndarray, mean: np.ndarray, cov: np.ndarray):
    return T.T @ mean, symmetrize(T.T @ cov @ T)
