"""Whole-sequence filter-bank runs with a compiled or pure-Python backend.

The compiled kernel (``immkit._kernel``) is used when it was built and
the problem fits its size limit; otherwise the recursion is driven step
by step through :func:`immkit.imm.imm_step` / :func:`immkit.amm.amm_step`.
Both routes implement the same arithmetic and agree to rounding.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .amm import BankState, amm_step, fuse
from .errors import DegenerateLikelihoods, InvalidParameter
from .imm import imm_step
from .models import ModelSet

try:
    from . import _kernel
except ImportError:  # pragma: no cover - depends on the build
    _kernel = None

log = logging.getLogger(__name__)

HAVE_COMPILED = _kernel is not None
MAX_KERNEL_DIM = 8
METHODS = ("imm", "amm")


@dataclass(frozen=True, eq=False)
class BankTrace:
    """Per-step fused output of one bank run. Row k is the estimate after ``ys[k]``."""

    mean: np.ndarray
    cov: np.ndarray
    mu: np.ndarray
    mu_pred: np.ndarray
    log_likelihood: np.ndarray


def resolve_backend(backend: str, model_set: Optional[ModelSet] = None) -> str:
    if backend not in ("auto", "compiled", "python"):
        raise InvalidParameter(f"unknown backend {backend!r}")
    fits = model_set is None or (
        max(model_set.r, model_set.fused_dim, model_set.meas_dim) <= MAX_KERNEL_DIM)
    if backend == "compiled":
        if not HAVE_COMPILED:
            raise InvalidParameter("compiled kernel is not available in this build")
        if not fits:
            raise InvalidParameter(f"compiled kernel supports dimensions up to {MAX_KERNEL_DIM}")
        return "compiled"
    if backend == "auto":
        return "compiled" if HAVE_COMPILED and fits else "python"
    return "python"


class PackedModelSet:
    """Model-set matrices padded into the fixed-stride layout of the kernel."""

    def __init__(self, model_set: ModelSet):
        r, M = model_set.r, MAX_KERNEL_DIM
        self.model_set = model_set
        self.A = np.zeros((r, M, M))
        self.Q = np.zeros((r, M, M))
        self.H = np.zeros((r, M, M))
        self.R = np.zeros((r, M, M))
        self.T = np.zeros((r, M, M))
        self.dims = np.array([m.dim for m in model_set.models], dtype=np.intc)
        for i, (m, T) in enumerate(zip(model_set.models, model_set.lifts)):
            n, d = m.dim, m.meas_dim
            self.A[i, :n, :n] = m.A
            self.Q[i, :n, :n] = m.Q
            self.H[i, :d, :n] = m.H
            self.R[i, :d, :d] = m.R
            self.T[i, :T.shape[0], :n] = T
        self.p = np.ascontiguousarray(model_set.transition, dtype=float)


def _run_compiled(packed: PackedModelSet, bank: BankState, ys: np.ndarray, method: str) -> BankTrace:
    ms = packed.model_set
    N = ms.fused_dim
    x0 = np.zeros((ms.r, N))
    P0 = np.zeros((ms.r, N, N))
    for i, s in enumerate(bank.per_model):
        x0[i, :s.dim] = s.mean
        P0[i, :s.dim, :s.dim] = s.cov
    status, step, mean, cov, mu, mu_pred, ll = _kernel.run_bank(
        1 if method == "imm" else 0, packed.A, packed.Q, packed.H, packed.R, packed.T,
        packed.dims, packed.p, ms.augmentation_variance, x0, P0,
        np.ascontiguousarray(bank.mu, dtype=float), ys)
    if status != _kernel.OK:
        reason = "singular innovation covariance" if status == _kernel.SINGULAR else \
            "all weighted likelihoods are zero at working precision"
        raise DegenerateLikelihoods(f"step {step}: {reason}")
    return BankTrace(mean, cov, mu, mu_pred, ll)


def _run_python(model_set: ModelSet, bank: BankState, ys: np.ndarray, method: str) -> BankTrace:
    step = imm_step if method == "imm" else amm_step
    K, N, r = ys.shape[0], model_set.fused_dim, model_set.r
    mean, cov = np.zeros((K, N)), np.zeros((K, N, N))
    mu, mu_pred, ll = np.zeros((K, r)), np.zeros((K, r)), np.zeros((K, r))
    for k in range(K):
        prior = bank.mu
        try:
            bank, est = step(model_set, bank, ys[k])
        except DegenerateLikelihoods as exc:
            raise DegenerateLikelihoods(f"step {k}: {exc}") from exc
        mean[k], cov[k] = est.state.mean, est.state.cov
        mu[k] = est.mu
        mu_pred[k] = est.mu_pred if est.mu_pred is not None else prior
        ll[k] = est.per_model_log_likelihood
    return BankTrace(mean, cov, mu, mu_pred, ll)


def run_bank(model_set: ModelSet, bank: BankState, ys, method: str = "imm",
             backend: str = "auto", packed: Optional[PackedModelSet] = None) -> BankTrace:
    """Run an IMM or AMM bank over all measurements ``ys`` (shape ``(K, d)``)."""
    if method not in METHODS:
        raise InvalidParameter(f"method must be one of {METHODS}, got {method!r}")
    ys = np.asarray(ys, dtype=float)
    if ys.shape[0] == 0:
        z = np.zeros((0, model_set.r))
        return BankTrace(np.zeros((0, model_set.fused_dim)),
                         np.zeros((0, model_set.fused_dim, model_set.fused_dim)), z, z, z)
    ys = np.ascontiguousarray(ys.reshape(ys.shape[0], -1))
    if resolve_backend(backend, model_set) == "compiled":
        if packed is None or packed.model_set is not model_set:
            packed = PackedModelSet(model_set)
        return _run_compiled(packed, bank, ys, method)
    return _run_python(model_set, bank, ys, method)


def initial_fused(model_set: ModelSet, bank: BankState):
    """Fused mean/covariance of a bank before any measurement."""
    est = fuse(model_set, bank)
    return est.state.mean, est.state.cov
