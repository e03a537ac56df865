#!/usr/bin/env python3
"""Show the SIMEX bandwidth curves M1(h), M2(h) and the extrapolated choice on one dataset."""

import argparse

import numpy as np

from trajqr.bandwidth import select_bandwidth
from trajqr.io import parse_grid
from trajqr.model import ModelConfig, stage_one
from trajqr.simgen import SimScenario, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--case", default="case1")
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--grid", default="0.4:1.6:0.1")
    ap.add_argument("--n-c", type=int, default=20)
    ap.add_argument("--tau", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sim = generate(SimScenario(args.case, args.n, seed=args.seed))
    sc = sim.scenario
    cfg = ModelConfig(k=sc.k, t_star=sc.t_star, error_family=sc.error_family, seed=args.seed)
    s1 = stage_one(sim.dataset, cfg)
    res = select_bandwidth(s1, cfg, args.tau, parse_grid(args.grid), args.n_c, s1.sigma2_hat)
    print(f"sigma2_hat = {s1.sigma2_hat:.4f}, subjects used = {s1.n_used}")
    print(f"{'h':>5} {'M1':>9} {'M2':>9}")
    for h, a, b in zip(res.h_grid, res.m1_curve, res.m2_curve):
        mark = (" <h1" if h == res.h1 else "") + (" <h2" if h == res.h2 else "")
        print(f"{h:5.2f} {a:9.4f} {b:9.4f}{mark}")
    print(f"h0 = h1^2 / h2 = {res.selected:.4f}")
    if res.disqualified:
        print("disqualified:", res.disqualified)
    if np.any(res.ridged):
        print("ridged covariances:", res.ridged)


if __name__ == "__main__":
    main()
