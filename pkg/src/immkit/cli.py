"""Command-line driver: scenario file in, CSV report bundle out.

Exit status: 0 success, 1 parse/validation error, 2 estimator failures in
more than 1% of the runs.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .engine import HAVE_COMPILED, resolve_backend
from .errors import ImmkitError, ParseError, ValidationError
from .models import GaussianState, StateSpaceModel, ca_model, cv_model, make_model_set
from .simulation import (DEFAULT_ESTIMATORS, PAPER_SCHEDULE, PAPER_TRANSITION, MonteCarloReport,
                         Scenario, paper_scenario, run_monte_carlo)

log = logging.getLogger("immkit")

FAILURE_FRACTION = 0.01
TOP_LEVEL_KEYS = {"builtin", "models", "transition", "mu0", "n_steps", "mode_schedule",
                  "initial_truth", "initial_estimate", "augmentation_variance", "runs", "seed",
                  "estimators"}
MODEL_KEYS = {"cv": {"kind", "name", "T", "sigma_w2", "sigma_e2", "q_form"},
              "custom": {"kind", "name", "A", "B", "H", "Q", "R", "W", "roles"}}
MODEL_KEYS["ca"] = MODEL_KEYS["cv"] - {"q_form"}


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _array(doc, key, field, ndim):
    try:
        a = np.asarray(doc[key], dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(field, "expected numbers") from None
    if a.ndim != ndim:
        raise ValidationError(field, f"expected a {'vector' if ndim == 1 else 'row-major matrix'}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(field, "entries must be finite")
    return a


def _number(doc, key, field, default, kind=float):
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(field, f"expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ValidationError(field, f"expected an integer, got {value!r}")
    return kind(value)


def _model(entry, i):
    field = f"models[{i}]"
    if not isinstance(entry, dict):
        raise ValidationError(field, "expected a table")
    kind = entry.get("kind")
    if kind not in MODEL_KEYS:
        raise ValidationError(f"{field}.kind", f"must be cv, ca or custom, got {kind!r}")
    unknown = set(entry) - MODEL_KEYS[kind]
    if unknown:
        raise ValidationError(f"{field}.{sorted(unknown)[0]}", f"unknown field for a {kind} model")
    try:
        if kind == "custom":
            for key in "ABHQR":
                if key not in entry:
                    raise ValidationError(f"{field}.{key}", "required for a custom model")
            mats = {k: _array(entry, k, f"{field}.{k}", 1 if k == "B" and np.ndim(entry[k]) == 1 else 2)
                    for k in "ABHQR"}
            W = _array(entry, "W", f"{field}.W", 2) if "W" in entry else None
            return StateSpaceModel(**mats, W=W, name=str(entry.get("name", f"M{i}")),
                                   roles=tuple(entry.get("roles", ())))
        args = [_number(entry, k, f"{field}.{k}", 1.0) for k in ("T", "sigma_w2", "sigma_e2")]
        if kind == "cv":
            model = cv_model(*args, q_form=entry.get("q_form", "tabulated"))
        else:
            model = ca_model(*args)
    except ValidationError:
        raise
    except ImmkitError as exc:
        raise ValidationError(field, str(exc)) from None
    if "name" in entry:
        object.__setattr__(model, "name", str(entry["name"]))
    return model


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a validated Scenario from a parsed document; missing keys take the builtin defaults."""
    unknown = set(doc) - TOP_LEVEL_KEYS
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown field")
    if doc.get("builtin", "paper") != "paper":
        raise ValidationError("builtin", f"unknown builtin scenario {doc['builtin']!r}")
    base = paper_scenario()
    if "models" in doc:
        if not isinstance(doc["models"], list) or not doc["models"]:
            raise ValidationError("models", "expected a non-empty array of tables")
        models = [_model(e, i) for i, e in enumerate(doc["models"])]
    else:
        models = list(base.model_set.models)
    r = len(models)
    if "transition" in doc:
        p = _array(doc, "transition", "transition", 2)
    elif r == 2:
        p = np.array(PAPER_TRANSITION)
    elif r == 1:
        p = np.ones((1, 1))
    else:
        raise ValidationError("transition", f"required for {r} models")
    if p.shape != (r, r):
        raise ValidationError("transition", f"must be {r}x{r}, got {p.shape[0]}x{p.shape[1]}")
    for j, row in enumerate(p):
        if np.any(row < 0) or np.any(row > 1):
            raise ValidationError(f"transition[{j}]", "entries must lie in [0, 1]")
        if abs(row.sum() - 1.0) > 1e-12:
            raise ValidationError(f"transition[{j}]", f"row sum {row.sum():.12g}, must be 1")
    aug = _number(doc, "augmentation_variance", "augmentation_variance", 0.0)
    try:
        ms = make_model_set(models, p, aug)
    except ImmkitError as exc:
        raise ValidationError("models", str(exc)) from None
    n = ms.fused_dim

    def vector(key, default, size):
        if key not in doc:
            return default
        v = _array(doc, key, key, 1)
        if v.size != size:
            raise ValidationError(key, f"expected {size} entries, got {v.size}")
        return v

    mu0 = vector("mu0", np.full(r, 1.0 / r), r)
    if np.any(mu0 < 0) or abs(mu0.sum() - 1.0) > 1e-9:
        raise ValidationError("mu0", f"must be a probability vector (sum {mu0.sum():.12g})")
    x0 = vector("initial_truth", np.zeros(n), n)
    est_doc = doc.get("initial_estimate", {})
    if not isinstance(est_doc, dict) or set(est_doc) - {"mean", "cov"}:
        raise ValidationError("initial_estimate", "expected a table with mean and cov")
    mean = _array(est_doc, "mean", "initial_estimate.mean", 1) if "mean" in est_doc else np.zeros(n)
    cov = _array(est_doc, "cov", "initial_estimate.cov", 2) if "cov" in est_doc else np.eye(n)
    if mean.size != n or cov.shape != (n, n):
        raise ValidationError("initial_estimate", f"mean must have {n} entries and cov be {n}x{n}")
    try:
        initial = GaussianState(mean, cov)
    except ImmkitError as exc:
        raise ValidationError("initial_estimate.cov", str(exc)) from None

    sched = doc.get("mode_schedule", PAPER_SCHEDULE if r == 2 else ((0, 0),))
    if sched == "markov":
        sched = None
    elif isinstance(sched, (list, tuple)):
        for k, item in enumerate(sched):
            if (not isinstance(item, (list, tuple)) or len(item) != 2
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in item)):
                raise ValidationError(f"mode_schedule[{k}]", "expected [start_step, model_index]")
    else:
        raise ValidationError("mode_schedule", 'expected a list of [start, model] pairs or "markov"')
    estimators = doc.get("estimators", DEFAULT_ESTIMATORS if r == 2 else
                         ["imm", "amm"] + [f"kf:{i}" for i in range(r)])
    if not isinstance(estimators, list) and not isinstance(estimators, tuple):
        raise ValidationError("estimators", "expected an array of names")
    fields = {"n_steps": _number(doc, "n_steps", "n_steps", base.n_steps, int),
              "runs": _number(doc, "runs", "runs", base.runs, int),
              "seed": _number(doc, "seed", "seed", base.seed, int)}
    for key in ("n_steps", "runs"):
        if fields[key] < 1:
            raise ValidationError(key, "must be >= 1")
    try:
        return Scenario(model_set=ms, mu0=mu0, initial_truth=x0, initial_estimate=initial,
                        mode_schedule=sched, estimators=tuple(estimators), **fields)
    except ImmkitError as exc:
        msg = str(exc)
        field = next((f for f in ("mode_schedule", "estimators") if f.split("_")[0] in msg),
                     "scenario")
        raise ValidationError(field, msg) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        loc = (getattr(exc, "lineno", None), getattr(exc, "colno", None))
        raise ParseError(f"{path}: {exc}", loc if loc[0] is not None else None) from None
    return scenario_from_dict(doc)


def scenario_echo(sc: Scenario) -> dict:
    ms = sc.model_set
    return {
        "models": [{"name": m.name, "A": m.A.tolist(), "B": m.B.tolist(), "H": m.H.tolist(),
                    "Q": m.Q.tolist(), "R": m.R.tolist()} for m in ms.models],
        "transition": ms.transition.tolist(),
        "augmentation_variance": ms.augmentation_variance,
        "mu0": sc.mu0.tolist(),
        "n_steps": sc.n_steps,
        "mode_schedule": "markov" if sc.mode_schedule is None else [list(s) for s in sc.mode_schedule],
        "initial_truth": sc.initial_truth.tolist(),
        "initial_estimate": {"mean": sc.initial_estimate.mean.tolist(),
                             "cov": sc.initial_estimate.cov.tolist()},
    }


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_report(report: MonteCarloReport, scenario: Scenario, out_dir, backend: str) -> None:
    """Write mode_probability.csv, rmse.csv, nees.csv, mode.csv and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = range(report.n_steps)
    r = scenario.model_set.r

    banks = [n for n in report.estimators if n in report.mode_probabilities]
    header = ["step"] + [f"{n}_mu{i}" for n in banks for i in range(r)]
    rows = [[k] + [_fmt(report.mode_probabilities[n][k, i]) for n in banks for i in range(r)]
            for k in steps]
    _write_csv(out / "mode_probability.csv", header, rows)

    header = ["step"] + list(report.estimators)
    rows = [[k] + [_fmt(report.position_rmse(n)[k]) for n in report.estimators] for k in steps]
    _write_csv(out / "rmse.csv", header, rows)

    cols = []
    for n in report.estimators:
        cols.append((n, report.nees[n]))
        if n in report.nees_pv:
            cols.append((f"{n}_pv", report.nees_pv[n]))
    bounds = []
    for d, iv in sorted(report.intervals.items()):
        bounds += [(f"lower_d{d}", iv.lower), (f"upper_d{d}", iv.upper)]
    header = ["step"] + [c for c, _ in cols] + [b for b, _ in bounds]
    rows = [[k] + [_fmt(v[k]) for _, v in cols] + [_fmt(b) for _, b in bounds] for k in steps]
    _write_csv(out / "nees.csv", header, rows)

    if report.modes is not None:
        _write_csv(out / "mode.csv", ["step", "mode"], [[k, int(m)] for k, m in enumerate(report.modes)])

    summary = {
        "version": __version__,
        "runs": report.runs,
        "runs_ok": report.runs_ok,
        "failure_count": report.failure_count,
        "failures": [{"run": j, "estimator": name, "error": msg} for j, name, msg in report.failures],
        "seed": report.seed,
        "backend": backend,
        "estimators": list(report.estimators),
        "model_names": [m.name for m in scenario.model_set.models],
        "nees_dims": report.nees_dims,
        "nees_regularized": report.regularized,
        "intervals": {str(d): {"lower": iv.lower, "upper": iv.upper, "runs": iv.runs,
                               "level": iv.level} for d, iv in sorted(report.intervals.items())},
        "mean_position_rmse": {n: float(np.mean(report.position_rmse(n))) for n in report.estimators},
        "config": scenario_echo(scenario),
    }
    with (out / "summary.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="immkit", description=(
        "Monte Carlo evaluation of IMM, AMM and single-model Kalman filters. "
        "Command-line --runs/--seed/--estimators override scenario-file values."))
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", type=Path, help="TOML scenario file")
    src.add_argument("--paper-default", action="store_true",
                     help="use the builtin CV/CA maneuvering scenario")
    p.add_argument("--runs", type=int, help="number of Monte Carlo runs")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out-dir", type=Path, default=Path("immkit-out"))
    p.add_argument("--estimators", help="comma-separated subset of imm, amm, kf:<index>")
    p.add_argument("--backend", choices=("auto", "compiled", "python"), default="auto")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = paper_scenario() if args.paper_default else load_scenario(args.scenario)
        overrides = {}
        if args.runs is not None:
            if args.runs < 1:
                raise ValidationError("--runs", "must be >= 1")
            overrides["runs"] = args.runs
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.estimators is not None:
            overrides["estimators"] = tuple(s for s in args.estimators.split(",") if s.strip())
        if overrides:
            try:
                scenario = replace(scenario, **overrides)
            except ImmkitError as exc:
                raise ValidationError("--estimators" if "estimator" in str(exc) else "arguments",
                                      str(exc)) from None
        backend = resolve_backend(args.backend)
    except ParseError as exc:
        where = f" (line {exc.location[0]}, column {exc.location[1]})" if exc.location else ""
        print(f"immkit: parse error{where}: {exc}", file=sys.stderr)
        return 1
    except (ValidationError, ImmkitError) as exc:
        print(f"immkit: invalid scenario: {exc}", file=sys.stderr)
        return 1

    log.info("running %d runs (seed %d, backend %s%s)", scenario.runs, scenario.seed, backend,
             "" if HAVE_COMPILED else ", compiled kernel unavailable")
    report = run_monte_carlo(scenario, backend=backend)
    write_report(report, scenario, args.out_dir, backend)
    if report.failure_count > FAILURE_FRACTION * report.runs:
        print(f"immkit: {report.failure_count} of {report.runs} runs failed", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
