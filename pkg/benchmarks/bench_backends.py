"""Compare the compiled and pure-Python bank backends.

Usage: python benchmarks/bench_backends.py [--steps N] [--repeat R] [--runs M]
"""
import argparse
import timeit

import numpy as np

from immkit.amm import amm_init
from immkit.engine import HAVE_COMPILED, run_bank
from immkit.simulation import make_rng, paper_scenario, run_monte_carlo, schedule_modes, simulate_trajectory


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--runs", type=int, default=50, help="Monte Carlo runs for the batch timing")
    args = ap.parse_args()

    sc = paper_scenario(n_steps=args.steps)
    ms = sc.model_set
    modes = schedule_modes(sc.mode_schedule, args.steps)
    _, ys = simulate_trajectory(ms, modes, sc.initial_truth, make_rng(1))
    bank = amm_init(ms, sc.initial_estimate, sc.mu0)
    backends = ["python"] + (["compiled"] if HAVE_COMPILED else [])
    if not HAVE_COMPILED:
        print("compiled kernel not available; timing the Python backend only")

    print(f"single bank run, {args.steps} steps (best of {args.repeat})")
    best = {}
    for method in ("imm", "amm"):
        for backend in backends:
            t = min(timeit.repeat(lambda: run_bank(ms, bank, ys, method, backend),
                                  number=1, repeat=args.repeat))
            best[method, backend] = t
            print(f"  {method:3s} {backend:8s} {t * 1e3:10.3f} ms")
        if HAVE_COMPILED:
            a = run_bank(ms, bank, ys, method, "python")
            b = run_bank(ms, bank, ys, method, "compiled")
            diff = np.max(np.abs(a.mean - b.mean) / np.maximum(np.abs(a.mean).max(), 1e-300))
            print(f"  {method:3s} speedup {best[method, 'python'] / best[method, 'compiled']:.0f}x, "
                  f"max scaled mean difference {diff:.1e}")

    print(f"Monte Carlo batch, {args.runs} runs, all default estimators")
    for backend in backends:
        t = min(timeit.repeat(lambda: run_monte_carlo(sc, runs=args.runs, backend=backend),
                              number=1, repeat=max(1, args.repeat // 2)))
        print(f"  {backend:8s} {t:8.3f} s")


if __name__ == "__main__":
    main()
