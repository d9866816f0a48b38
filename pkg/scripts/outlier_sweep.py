"""Baseline filters across Gaussian-mixture outlier strengths.

    python scripts/outlier_sweep.py --out runs/outlier_sweep.csv
"""

import argparse
import csv

import numpy as np

from rkflab.datasets import generate
from rkflab.evaluation import compare, make_filter
from rkflab.noise import NoiseSpec
from rkflab.statespace import cv_initial_belief, cv_model

RBAR = 10 * np.eye(2)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--U", type=float, nargs="+", default=[1, 10, 100, 1000, 10000])
    ap.add_argument("--N", type=int, default=200)
    ap.add_argument("--T", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/outlier_sweep.csv")
    args = ap.parse_args()

    model, init = cv_model(), cv_initial_belief()
    rows = []
    for U in args.U:
        ds = generate(model, NoiseSpec.gm(RBAR, U), init, args.N, args.T, args.seed, "test")
        filters = {n: make_filter(n, ds, RBAR) for n in ("kf", "kftncm", "vb", "oracle")}
        for r in compare(filters, ds):
            rows.append([U, r.filter, r.status, repr(r.armse), repr(r.log10_armse)])
            print(f"U={U:g}\t{r.filter}\t{r.armse:.4f}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["U", "filter", "status", "armse", "log10_armse"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
