#!/usr/bin/env python3
"""Monte-Carlo study over the simulation designs: bias, SD, ESE and coverage tables.

    python scripts/run_simulation_study.py --cases case1 quadratic_laplace --reps 200 --out results/
"""

import argparse
import logging
import os
import time
from pathlib import Path

import numpy as np

from trajqr.io import BENCH_COLUMNS, write_table
from trajqr.model import FixedBandwidth, ModelConfig
from trajqr.simgen import Case, SimScenario, run_replication


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--cases", nargs="+", default=[c.value for c in Case])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--n-b", type=int, default=200)
    ap.add_argument("--h", type=float, default=0.8)
    ap.add_argument("--taus", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    args.out.mkdir(parents=True, exist_ok=True)
    cfg = ModelConfig(bandwidth=FixedBandwidth(args.h), seed=args.seed)
    for case in args.cases:
        t0 = time.time()
        rep = run_replication(SimScenario(case, args.n, seed=args.seed), cfg, args.reps,
                              tau_grid=tuple(args.taus), n_b=args.n_b, workers=args.workers)
        write_table(args.out / f"bench_{case}_n{args.n}.csv", BENCH_COLUMNS, rep.rows())
        print(f"\n{case}: n={args.n} reps={rep.n_reps} failed={rep.n_failed} "
              f"({time.time() - t0:.0f}s)")
        print(f"{'tau':>5} {'coef':>9} {'bias_naive':>11} {'bias_prop':>10} {'sd':>7} "
              f"{'ese':>7} {'cover':>6}")
        for tau, coef, bn, bp, sd, ese, cov in rep.rows():
            print(f"{tau:5.2f} {coef:>9} {bn:11.4f} {bp:10.4f} {sd:7.4f} {ese:7.4f} "
                  f"{cov if np.isfinite(cov) else float('nan'):6.3f}")


if __name__ == "__main__":
    main()
