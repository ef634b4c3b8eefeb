"""Interacting multiple-model estimator.

One cycle: predict mode probabilities through the Markov chain, compute
mixing weights, re-initialise every filter from the mixture of all
previous estimates, run the r filters, update mode probabilities from
the innovation likelihoods and fuse the outputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .amm import (PROBABILITY_FLOOR, BankState, amm_init, bank_filter_step,
                  check_probability_vector, fuse, posterior_weights)
from .errors import DimensionMismatch
from .linalg import as_vector, symmetrize
from .models import FILTERED, GaussianState, ModelSet, check_stochastic, lift_state, project_state


@dataclass(frozen=True, eq=False)
class MixingWeights:
    """``w[j, i]``: probability the previous mode was j given mode i now."""

    w: np.ndarray
    mu_pred: np.ndarray


def predict_mode_probabilities(transition, mu) -> np.ndarray:
    p = check_stochastic(transition)
    mu = check_probability_vector(mu, p.shape[0])
    return p.T @ mu


def mixing_weights(transition, mu) -> MixingWeights:
    p = check_stochastic(transition)
    mu = check_probability_vector(mu, p.shape[0])
    mu_pred = p.T @ mu
    joint = p * mu[:, None]
    w = np.empty_like(joint)
    for i in range(p.shape[0]):
        if mu_pred[i] < PROBABILITY_FLOOR:
            col = p[:, i]
            total = col.sum()
            w[:, i] = col / total if total > 0 else 1.0 / p.shape[0]
        else:
            w[:, i] = joint[:, i] / mu_pred[i]
    return MixingWeights(w=w, mu_pred=mu_pred)


def mix_estimates(model_set: ModelSet, bank: BankState, weights: MixingWeights):
    """Mixed initial condition for every filter, formed in the fused space."""
    if weights.w.shape != (model_set.r, model_set.r):
        raise DimensionMismatch("mixing weights do not match the model set")
    aug = model_set.augmentation_variance
    lifted = [lift_state(T, s.mean, s.cov, aug) for T, s in zip(model_set.lifts, bank.per_model)]
    n = model_set.fused_dim
    mixed = []
    for i, T in enumerate(model_set.lifts):
        col = weights.w[:, i]
        mean = np.zeros(n)
        for wj, (m, _) in zip(col, lifted):
            mean = mean + wj * m
        cov = np.zeros((n, n))
        for wj, (m, c) in zip(col, lifted):
            dx = mean - m
            cov = cov + wj * (c + np.outer(dx, dx))
        m_i, c_i = project_state(T, mean, symmetrize(cov))
        mixed.append(GaussianState(m_i, c_i, bank.time_index, FILTERED))
    return mixed


def imm_step(model_set: ModelSet, bank: BankState, y):
    """One IMM cycle; returns ``(new_bank, fused_estimate)``.

    The fused estimate carries the predicted mode probabilities and the
    per-model log-likelihoods for diagnostics.
    """
    y = as_vector(y, "y")
    if y.size != model_set.meas_dim:
        raise DimensionMismatch(f"measurement has dim {y.size}, models expect {model_set.meas_dim}")
    weights = mixing_weights(model_set.transition, bank.mu)
    starts = mix_estimates(model_set, bank, weights)
    filtered, log_l = bank_filter_step(model_set, starts, y)
    mu = posterior_weights(weights.mu_pred, log_l)
    new_bank = BankState(filtered, mu, bank.time_index + 1, log_l)
    return new_bank, fuse(model_set, new_bank, mu_pred=weights.mu_pred)


imm_init = amm_init
