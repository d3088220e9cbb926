#!/usr/bin/env python3
"""Run a safe-BO tuning campaign and print a short report.

The full protocol (100 safe seeds, 400 BO iterations, 150-step episodes)
takes a few hours on one core; --scaled runs the reduced version used by
the acceptance suite (20 seeds, 50 iterations, 100-step episodes, a couple
of minutes).
"""

import argparse
import time

from safempc.harness import ExperimentConfig, tune


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/campaign")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--scaled", action="store_true",
                        help="reduced protocol: n_init=20, n_iter=50, M=100")
    args = parser.parse_args()

    kw = dict(seed=args.seed)
    if args.scaled:
        kw.update(n_init=20, n_iter=50, steps=100)
    cfg = ExperimentConfig(**kw)

    t0 = time.perf_counter()
    log = tune(cfg, args.out)
    s = log.data["summary"]
    improvement = 1.0 - s["incumbent_g0"] / s["baseline_g0"]
    print(f"baseline G0      {s['baseline_g0']:.1f}")
    print(f"incumbent G0     {s['incumbent_g0']:.1f}  ({improvement:+.2%})")
    print(f"envelope violations: {s['violations_total']} "
          f"({s['violations_bo']} during BO)")
    print(f"episodes logged: {s['n_episodes']}  "
          f"({time.perf_counter() - t0:.0f}s)")
    print(f"artifacts under {args.out}/: run.json, curve.csv, episodes/")


if __name__ == "__main__":
    main()
