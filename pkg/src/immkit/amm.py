"""Autonomous multiple-model estimator: a static bank of Kalman filters.

The bank assumes one fixed (unknown) true model. Each filter runs
independently, its innovation likelihood drives a Bayesian recursion on
the mode probabilities, and the outputs are merged by moment matching in
the fused state space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateLikelihoods, DimensionMismatch, NonFiniteValue, NotAProbabilityVector
from .errors import SingularInnovationCovariance
from .kalman import innovate, log_likelihood, predict, update
from .linalg import as_vector, is_psd, symmetrize
from .models import FILTERED, GaussianState, ModelSet, lift_state, project_state

PROBABILITY_FLOOR = 1e-12
PROBABILITY_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class BankState:
    per_model: tuple
    mu: np.ndarray
    time_index: int
    log_likelihood: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class FusedEstimate:
    state: GaussianState
    mu: np.ndarray
    per_model_log_likelihood: Optional[np.ndarray] = None
    mu_pred: Optional[np.ndarray] = None


def check_probability_vector(mu, r: Optional[int] = None, name="mu") -> np.ndarray:
    try:
        mu = as_vector(mu, name)
    except NonFiniteValue as exc:
        raise NotAProbabilityVector(str(exc)) from None
    if r is not None and mu.size != r:
        raise DimensionMismatch(f"{name} has {mu.size} entries, expected {r}")
    if np.any(mu < 0.0) or np.any(mu > 1.0):
        raise NotAProbabilityVector(f"{name} entries must lie in [0, 1]")
    if abs(mu.sum() - 1.0) > PROBABILITY_ATOL:
        raise NotAProbabilityVector(f"{name} sums to {mu.sum():.12g}, not 1")
    return mu


def amm_init(model_set: ModelSet, initial: GaussianState, mu0=None) -> BankState:
    """Project a fused-space initial estimate onto every model of the set."""
    r = model_set.r
    mu0 = np.full(r, 1.0 / r) if mu0 is None else check_probability_vector(mu0, r, "mu0")
    if initial.dim != model_set.fused_dim:
        raise DimensionMismatch(
            f"initial state has dim {initial.dim}, fused space has {model_set.fused_dim}")
    per_model = []
    for T in model_set.lifts:
        m, c = project_state(T, initial.mean, initial.cov)
        per_model.append(GaussianState(m, c, initial.time_index, FILTERED))
    return BankState(tuple(per_model), mu0.copy(), initial.time_index)


def normalize_log_weights(log_w: np.ndarray, floor: float = PROBABILITY_FLOOR) -> np.ndarray:
    """Exponentiate and normalize log weights with max-shift and a probability floor.

    Entries below ``floor`` are set exactly to ``floor``; the rest are
    rescaled so the vector still sums to one.
    """
    top = np.max(log_w)
    if not np.isfinite(top):
        raise DegenerateLikelihoods("all weighted likelihoods are zero at working precision")
    w = np.exp(log_w - top)
    return _apply_floor(w / w.sum(), floor)


def _apply_floor(mu: np.ndarray, floor: float) -> np.ndarray:
    low = mu < floor
    if np.any(low):
        while True:
            free = ~low
            mu = np.where(low, floor, mu)
            budget = 1.0 - floor * np.count_nonzero(low)
            mu[free] *= budget / mu[free].sum()
            newly = free & (mu < floor)
            if not np.any(newly):
                break
            low |= newly
    return mu


# below this total the direct product is re-done in log space
_DIRECT_MIN_TOTAL = 1e-280


def posterior_weights(mu: np.ndarray, log_l, floor: float = PROBABILITY_FLOOR) -> np.ndarray:
    """Normalized ``mu_i * L_i`` with the probability floor applied.

    The likelihoods are shifted by their maximum over the support of
    ``mu`` and multiplied into ``mu`` directly, so equal likelihoods
    return ``mu`` unchanged. If that product underflows the computation
    falls back to full log space.
    """
    log_l = np.asarray(log_l, dtype=float)
    if log_l.shape != mu.shape:
        raise DimensionMismatch(f"{log_l.size} likelihoods for {mu.size} models")
    if np.any(np.isnan(log_l)) or np.any(log_l == np.inf):
        raise NonFiniteValue("log likelihoods must be finite or -inf")
    support = mu > 0.0
    top = np.max(log_l[support]) if np.any(support) else -np.inf
    if not np.isfinite(top):
        raise DegenerateLikelihoods("all weighted likelihoods are zero at working precision")
    w = mu * np.exp(log_l - top)
    total = w.sum()
    if total < _DIRECT_MIN_TOTAL:
        with np.errstate(divide="ignore"):
            return normalize_log_weights(np.log(mu) + log_l, floor)
    return _apply_floor(w / total, floor)


def update_mode_probabilities(mu_prev, log_l) -> np.ndarray:
    """Bayes recursion ``mu_i ∝ mu_prev_i * L_i`` evaluated in log space."""
    mu_prev = check_probability_vector(mu_prev, name="mu_prev")
    return posterior_weights(mu_prev, log_l)


def fuse_moments(model_set: ModelSet, states, mu: np.ndarray):
    """Moment-matched mixture of per-model estimates in the fused space."""
    aug = model_set.augmentation_variance
    lifted = [lift_state(T, s.mean, s.cov, aug) for T, s in zip(model_set.lifts, states)]
    mean = np.zeros(model_set.fused_dim)
    for w, (m, _) in zip(mu, lifted):
        mean = mean + w * m
    cov = np.zeros((model_set.fused_dim, model_set.fused_dim))
    for w, (m, c) in zip(mu, lifted):
        dx = m - mean
        cov = cov + w * (c + np.outer(dx, dx))
    return mean, symmetrize(cov)


def fuse(model_set: ModelSet, bank: BankState, mu_pred=None) -> FusedEstimate:
    mean, cov = fuse_moments(model_set, bank.per_model, bank.mu)
    if not is_psd(cov):
        raise ArithmeticError("fused covariance lost positive semidefiniteness")
    state = GaussianState(mean, cov, bank.time_index, FILTERED)
    return FusedEstimate(state=state, mu=bank.mu.copy(),
                         per_model_log_likelihood=bank.log_likelihood, mu_pred=mu_pred)


def bank_filter_step(model_set: ModelSet, starts, y):
    """Run predict / innovate / likelihood / update for each model in index order."""
    filtered, log_l = [], np.empty(model_set.r)
    for i, (model, state) in enumerate(zip(model_set.models, starts)):
        pred = predict(model, state)
        try:
            inn = innovate(model, pred, y)
        except SingularInnovationCovariance as exc:
            raise DegenerateLikelihoods(f"model {i}: {exc}") from exc
        log_l[i] = log_likelihood(inn)
        filtered.append(update(model, pred, y, inn))
    return tuple(filtered), log_l


def amm_step(model_set: ModelSet, bank: BankState, y):
    """One AMM cycle. Returns the new bank and its fused estimate.

    The input bank is never modified; on error it remains the valid state.
    """
    y = as_vector(y, "y")
    if y.size != model_set.meas_dim:
        raise DimensionMismatch(f"measurement has dim {y.size}, models expect {model_set.meas_dim}")
    filtered, log_l = bank_filter_step(model_set, bank.per_model, y)
    mu = posterior_weights(bank.mu, log_l)
    new_bank = BankState(filtered, mu, bank.time_index + 1, log_l)
    return new_bank, fuse(model_set, new_bank)
