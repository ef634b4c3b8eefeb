"""Ground-truth generation and Monte Carlo evaluation of the estimators.

Truth lives in the fused state space. While model i is active the fused
state is projected onto model i, propagated with ``A x + B w`` and lifted
back, so components the active model lacks (acceleration under CV) are
zero. Every run draws its randomness from its own Philox stream keyed by
``child_seed(master_seed, run)``, in this order: mode indices (Markov
schedules only), process noise ``(n_steps, q)``, measurement noise
``(n_steps, d)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .amm import amm_init, check_probability_vector
from .engine import PackedModelSet, initial_fused, resolve_backend, run_bank
from .errors import DimensionMismatch, ImmkitError, InvalidParameter
from .linalg import cholesky, psd_factor
from .metrics import NeesInterval, nees_batch, nees_interval
from .models import FILTERED, GaussianState, ModelSet, ca_model, cv_model, make_model_set

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
CHUNK_RUNS = 128
PAPER_TRANSITION = ((0.75, 0.25), (0.25, 0.75))
PAPER_SCHEDULE = ((0, 0), (50, 1), (100, 0), (150, 1))
DEFAULT_ESTIMATORS = ("imm", "amm", "kf:0", "kf:1")


def mix64(z: int) -> int:
    """SplitMix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def child_seed(master_seed: int, run: int) -> int:
    return mix64((int(master_seed) & MASK64) ^ (((run + 1) * GOLDEN_GAMMA) & MASK64))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64))


@dataclass(frozen=True, eq=False)
class Scenario:
    model_set: ModelSet
    n_steps: int
    mu0: np.ndarray
    initial_truth: np.ndarray
    initial_estimate: GaussianState
    mode_schedule: Optional[Tuple[Tuple[int, int], ...]] = PAPER_SCHEDULE
    runs: int = 1000
    seed: int = 1
    estimators: Tuple[str, ...] = DEFAULT_ESTIMATORS

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidParameter("n_steps must be a positive integer")
        ms = self.model_set
        object.__setattr__(self, "mu0", check_probability_vector(self.mu0, ms.r, "mu0"))
        truth = np.asarray(self.initial_truth, dtype=float)
        if truth.shape != (ms.fused_dim,):
            raise DimensionMismatch(f"initial_truth must have {ms.fused_dim} entries")
        object.__setattr__(self, "initial_truth", truth)
        if self.initial_estimate.dim != ms.fused_dim:
            raise DimensionMismatch(f"initial_estimate must have dim {ms.fused_dim}")
        if self.mode_schedule is not None:
            sched = tuple((int(s), int(i)) for s, i in self.mode_schedule)
            if not sched or sched[0][0] != 0:
                raise InvalidParameter("mode_schedule must start at step 0")
            for (a, _), (b, _) in zip(sched, sched[1:]):
                if b <= a:
                    raise InvalidParameter("mode_schedule start steps must increase")
            for _, i in sched:
                if not 0 <= i < ms.r:
                    raise InvalidParameter(f"mode_schedule model index {i} out of range")
            object.__setattr__(self, "mode_schedule", sched)
        if int(self.runs) != self.runs or self.runs < 1:
            raise InvalidParameter("runs must be a positive integer")
        object.__setattr__(self, "estimators", tuple(parse_estimators(self.estimators, ms.r)))

    @property
    def markov(self) -> bool:
        return self.mode_schedule is None


def paper_scenario(**overrides) -> Scenario:
    """Builtin CV/CA maneuvering scenario; keyword arguments replace fields."""
    ms = make_model_set([cv_model(1.0, 1.0, 1.0), ca_model(1.0, 1.0, 1.0)], PAPER_TRANSITION)
    kwargs = dict(model_set=ms, n_steps=200, mu0=np.array([0.5, 0.5]),
                  initial_truth=np.zeros(3),
                  initial_estimate=GaussianState(np.zeros(3), np.eye(3)),
                  mode_schedule=PAPER_SCHEDULE, runs=1000, seed=1,
                  estimators=DEFAULT_ESTIMATORS)
    kwargs.update(overrides)
    return Scenario(**kwargs)


def parse_estimators(names: Sequence[str], r: int) -> List[str]:
    out = []
    for name in names:
        name = str(name).strip().lower()
        if name in ("imm", "amm"):
            pass
        elif name.startswith("kf:"):
            try:
                idx = int(name[3:])
            except ValueError:
                raise InvalidParameter(f"bad estimator {name!r}; use kf:<model index>") from None
            if not 0 <= idx < r:
                raise InvalidParameter(f"estimator {name!r}: model index out of range")
            name = f"kf:{idx}"
        else:
            raise InvalidParameter(f"unknown estimator {name!r}")
        if name in out:
            raise InvalidParameter(f"estimator {name!r} listed twice")
        out.append(name)
    if not out:
        raise InvalidParameter("at least one estimator is required")
    return out


def schedule_modes(schedule, n: int) -> np.ndarray:
    modes = np.empty(n, dtype=np.intp)
    for (start, idx), nxt in zip(schedule, list(schedule[1:]) + [(n, None)]):
        modes[min(start, n):min(nxt[0], n)] = idx
    return modes


def sample_mode_sequence(transition, mu0, n: int, rng: np.random.Generator) -> np.ndarray:
    """Markov chain path by inverse-CDF sampling with index-ordered cumulative sums."""
    p = np.asarray(transition, dtype=float)
    cdf0 = np.cumsum(np.asarray(mu0, dtype=float))
    cdfs = np.cumsum(p, axis=1)
    u = rng.random(n)
    r = p.shape[0]
    modes = np.empty(n, dtype=np.intp)
    cur = min(int(np.searchsorted(cdf0, u[0], side="right")), r - 1)
    modes[0] = cur
    for k in range(1, n):
        cur = min(int(np.searchsorted(cdfs[cur], u[k], side="right")), r - 1)
        modes[k] = cur
    return modes


class _TruthModel:
    """Fused-space propagation and measurement matrices for every mode."""

    def __init__(self, model_set: ModelSet):
        self.F, self.G, self.Hf, self.LR, self.P = [], [], [], [], []
        for m, T in zip(model_set.models, model_set.lifts):
            G = m.B @ psd_factor(m.W) if m.W is not None else psd_factor(m.Q)
            self.F.append(T @ m.A @ T.T)
            self.G.append(T @ G)
            self.Hf.append(m.H @ T.T)
            self.LR.append(cholesky(m.R))
            self.P.append(T @ T.T)
        self.q = max(g.shape[1] for g in self.G)
        self.d = model_set.meas_dim
        self.fused_dim = model_set.fused_dim

    def propagate(self, modes: np.ndarray, x0: np.ndarray, z_proc: np.ndarray,
                  z_meas: np.ndarray):
        """Batch over runs: ``modes (R, K)``, noises ``(R, K, q)`` and ``(R, K, d)``."""
        R, K = modes.shape
        truth = np.empty((R, K, self.fused_dim))
        ys = np.empty((R, K, self.d))
        x = np.tile(x0, (R, 1))
        for k in range(K):
            for i, (F, G, P) in enumerate(zip(self.F, self.G, self.P)):
                sel = modes[:, k] == i
                if not np.any(sel):
                    continue
                if k == 0:
                    x[sel] = x[sel] @ P.T
                else:
                    x[sel] = x[sel] @ F.T + z_proc[sel, k, :G.shape[1]] @ G.T
            truth[:, k] = x
            for i, (Hf, LR) in enumerate(zip(self.Hf, self.LR)):
                sel = modes[:, k] == i
                if np.any(sel):
                    ys[sel, k] = x[sel] @ Hf.T + z_meas[sel, k] @ LR.T
        return truth, ys


def simulate_trajectory(model_set: ModelSet, modes, x0, rng: np.random.Generator):
    """Draw one truth trajectory and its measurements for a given mode sequence.

    Returns ``(truth, measurements)`` with shapes ``(K, n_fused)`` and ``(K, d)``.
    """
    modes = np.asarray(modes, dtype=np.intp).reshape(1, -1)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model_set.fused_dim,):
        raise DimensionMismatch(f"x0 must have {model_set.fused_dim} entries")
    if np.any(modes < 0) or np.any(modes >= model_set.r):
        raise DimensionMismatch("mode index out of range")
    tm = _TruthModel(model_set)
    K = modes.shape[1]
    z_proc = rng.standard_normal((K, tm.q))[None]
    z_meas = rng.standard_normal((K, tm.d))[None]
    truth, ys = tm.propagate(modes, x0, z_proc, z_meas)
    return truth[0], ys[0]


@dataclass(frozen=True, eq=False)
class EstimatorTrace:
    """Per-step estimates of one estimator; ``lift`` maps its space into the fused one."""

    name: str
    mean: np.ndarray
    cov: np.ndarray
    lift: np.ndarray
    roles: tuple
    mu: Optional[np.ndarray] = None

    def as_gaussian_states(self) -> List[GaussianState]:
        return [GaussianState(m, c, k, FILTERED) for k, (m, c) in enumerate(zip(self.mean, self.cov))]


@dataclass(frozen=True, eq=False)
class RunTrace:
    truth: np.ndarray
    modes: np.ndarray
    measurements: np.ndarray
    estimates: Dict[str, EstimatorTrace]


class _Estimator:
    """Prepared bank for one estimator name, reused across runs."""

    def __init__(self, scenario: Scenario, name: str, backend: str):
        ms = scenario.model_set
        self.name = name
        if name in ("imm", "amm"):
            self.method = name
            self.model_set = ms
            self.lift = np.eye(ms.fused_dim)
            self.roles = ms.fused_roles
            self.bank = amm_init(ms, scenario.initial_estimate, scenario.mu0)
        else:
            idx = int(name[3:])
            self.method = "imm"
            model = ms.models[idx]
            self.model_set = make_model_set([model], [[1.0]])
            self.lift = ms.lifts[idx]
            self.roles = model.roles
            T = ms.lifts[idx]
            init = scenario.initial_estimate
            self.bank = amm_init(self.model_set, GaussianState(T.T @ init.mean, T.T @ init.cov @ T))
        self.backend = resolve_backend(backend, self.model_set)
        self.packed = PackedModelSet(self.model_set) if self.backend == "compiled" else None
        self.m0, self.c0 = initial_fused(self.model_set, self.bank)

    @property
    def is_bank(self) -> bool:
        return self.name in ("imm", "amm")

    def run(self, ys: np.ndarray) -> EstimatorTrace:
        tr = run_bank(self.model_set, self.bank, ys[1:], self.method, self.backend, self.packed)
        mean = np.concatenate([self.m0[None], tr.mean])
        cov = np.concatenate([self.c0[None], tr.cov])
        mu = None
        if self.is_bank:
            mu = np.concatenate([self.bank.mu[None], tr.mu])
        return EstimatorTrace(self.name, mean, cov, self.lift, self.roles, mu)


def _draw_run(scenario: Scenario, seed: int, tm: _TruthModel):
    rng = make_rng(seed)
    K = scenario.n_steps
    if scenario.markov:
        modes = sample_mode_sequence(scenario.model_set.transition, scenario.mu0, K, rng)
    else:
        modes = schedule_modes(scenario.mode_schedule, K)
    z_proc = rng.standard_normal((K, tm.q))
    z_meas = rng.standard_normal((K, tm.d))
    return modes, z_proc, z_meas


def run_single(scenario: Scenario, seed: int, estimators=None, backend: str = "auto") -> RunTrace:
    """One seeded run of the scenario with every requested estimator."""
    names = parse_estimators(estimators or scenario.estimators, scenario.model_set.r)
    tm = _TruthModel(scenario.model_set)
    modes, zp, zm = _draw_run(scenario, seed, tm)
    truth, ys = tm.propagate(modes[None], scenario.initial_truth, zp[None], zm[None])
    ests = {n: _Estimator(scenario, n, backend).run(ys[0]) for n in names}
    return RunTrace(truth[0], modes, ys[0], ests)


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    estimators: Tuple[str, ...]
    n_steps: int
    runs: int
    runs_ok: int
    seed: int
    modes: Optional[np.ndarray]
    rmse: Dict[str, np.ndarray]
    roles: Dict[str, tuple]
    nees: Dict[str, np.ndarray]
    nees_pv: Dict[str, np.ndarray]
    nees_dims: Dict[str, int]
    mode_probabilities: Dict[str, np.ndarray]
    intervals: Dict[int, NeesInterval]
    failures: List[Tuple[int, str, str]] = field(default_factory=list)
    regularized: int = 0
    level: float = 0.95

    @property
    def failure_count(self) -> int:
        return self.runs - self.runs_ok

    def position_rmse(self, name: str) -> np.ndarray:
        roles = self.roles[name]
        idx = roles.index("position") if "position" in roles else 0
        return self.rmse[name][:, idx]


def _pv_indices(roles: tuple):
    if "position" in roles and "velocity" in roles:
        return [roles.index("position"), roles.index("velocity")]
    return None


def run_monte_carlo(scenario: Scenario, estimators=None, runs: Optional[int] = None,
                    master_seed: Optional[int] = None, backend: str = "auto",
                    level: float = 0.95) -> MonteCarloReport:
    """Monte Carlo batch; fully deterministic given ``master_seed``.

    A run in which any estimator raises is excluded from every aggregate
    and recorded in ``failures``; the batch continues.
    """
    names = tuple(parse_estimators(estimators or scenario.estimators, scenario.model_set.r))
    runs = scenario.runs if runs is None else int(runs)
    if runs < 1:
        raise InvalidParameter("runs must be >= 1")
    seed = scenario.seed if master_seed is None else int(master_seed)
    K = scenario.n_steps
    tm = _TruthModel(scenario.model_set)
    ests = [_Estimator(scenario, n, backend) for n in names]
    pv = {e.name: _pv_indices(e.roles) for e in ests if e.is_bank}

    sq = {e.name: np.zeros((K, e.lift.shape[1])) for e in ests}
    nees_sum = {e.name: np.zeros(K) for e in ests}
    pv_sum = {n: np.zeros(K) for n, idx in pv.items() if idx is not None}
    mu_sum = {e.name: np.zeros((K, scenario.model_set.r)) for e in ests if e.is_bank}
    failures: List[Tuple[int, str, str]] = []
    runs_ok = 0
    n_reg = 0

    for start in range(0, runs, CHUNK_RUNS):
        idx = range(start, min(start + CHUNK_RUNS, runs))
        draws = [_draw_run(scenario, child_seed(seed, j), tm) for j in idx]
        modes = np.stack([d[0] for d in draws])
        truth, ys = tm.propagate(modes, scenario.initial_truth,
                                 np.stack([d[1] for d in draws]), np.stack([d[2] for d in draws]))
        per_est = {e.name: [] for e in ests}
        kept = []
        for row, j in enumerate(idx):
            traces = []
            try:
                for e in ests:
                    traces.append(e.run(ys[row]))
            except (ImmkitError, ArithmeticError, np.linalg.LinAlgError) as exc:
                failed = ests[len(traces)].name
                failures.append((j, failed, str(exc)))
                log.warning("run %d failed in %s: %s", j, failed, exc)
                continue
            kept.append(row)
            for e, tr in zip(ests, traces):
                per_est[e.name].append(tr)
        if not kept:
            continue
        runs_ok += len(kept)
        X = truth[kept]
        for e in ests:
            trs = per_est[e.name]
            mean = np.stack([t.mean for t in trs])
            cov = np.stack([t.cov for t in trs])
            err = X @ e.lift - mean
            sq[e.name] += np.sum(err * err, axis=0)
            vals, reg = nees_batch(err, cov)
            n_reg += reg
            nees_sum[e.name] += np.sum(vals, axis=0)
            if e.name in pv_sum:
                sel = pv[e.name]
                vals, reg = nees_batch(err[..., sel], cov[..., sel, :][..., sel])
                n_reg += reg
                pv_sum[e.name] += np.sum(vals, axis=0)
            if e.name in mu_sum:
                mu_sum[e.name] += np.sum(np.stack([t.mu for t in trs]), axis=0)

    denom = max(runs_ok, 1)
    dims = {e.name: e.lift.shape[1] for e in ests}
    interval_dims = sorted(set(dims.values()) | ({2} if pv_sum else set()))
    intervals = {d: nees_interval(d, denom, level) for d in interval_dims}
    return MonteCarloReport(
        estimators=names, n_steps=K, runs=runs, runs_ok=runs_ok, seed=seed,
        modes=None if scenario.markov else schedule_modes(scenario.mode_schedule, K),
        rmse={n: np.sqrt(v / denom) for n, v in sq.items()},
        roles={e.name: e.roles for e in ests},
        nees={n: v / denom for n, v in nees_sum.items()},
        nees_pv={n: v / denom for n, v in pv_sum.items()},
        nees_dims=dims,
        mode_probabilities={n: v / denom for n, v in mu_sum.items()},
        intervals=intervals, failures=failures, regularized=n_reg, level=level)
