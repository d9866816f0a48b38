"""Train at desk scale and compare the selected model with the baselines.

    python scripts/desk_training.py --family gm --param 100
    python scripts/desk_training.py --family sgas --param 0.5 --runs 1
"""

import argparse
import time
from pathlib import Path

import numpy as np

from rkflab.datasets import generate_datasets
from rkflab.evaluation import compare, make_filter
from rkflab.filters import FixedPointControl, vb_rkf_filter
from rkflab.noise import NoiseSpec
from rkflab.rkfnet import r_hat
from rkflab.statespace import cv_initial_belief, cv_model
from rkflab.training import TrainingConfig, train_runs, write_training_log

RBAR = 10 * np.eye(2)
NOISES = {
    "gm": lambda x: NoiseSpec.gm(RBAR, x),
    "st": lambda x: NoiseSpec.student_t(RBAR, x),
    "sgas": lambda x: NoiseSpec.sgas(RBAR, x),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", choices=sorted(NOISES), default="gm")
    ap.add_argument("--param", type=float, default=100.0, help="U, v or alpha")
    ap.add_argument("--sizes", type=int, nargs=3, default=[400, 100, 200])
    ap.add_argument("--T", type=int, default=50)
    ap.add_argument("--iterations", type=int, default=600)
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--batch-size", type=int, default=200, dest="batch_size")
    ap.add_argument("--loss", choices=["st", "l1", "l2"], default="st")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()

    model, init = cv_model(), cv_initial_belief()
    data = generate_datasets(model, NOISES[args.family](args.param), args.sizes, args.T, args.seed,
                             init)
    ref = vb_rkf_filter(model, RBAR, 3.0, FixedPointControl(), data["train"].observations, init)
    cfg = TrainingConfig(iterations=args.iterations, runs=args.runs, loss=args.loss, seed=args.seed,
                         batch_size=args.batch_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    params, runs, best = train_runs(model, init, data["train"], data["cv"], ref, cfg)
    print(f"trained {args.runs} run(s) in {time.perf_counter() - start:.0f}s, selected {best}")
    for r, run in enumerate(runs):
        if run is not None:
            write_training_log(run[1], out / f"training_log_run{r}.tsv")

    test = data["test"]
    filters = {n: make_filter(n, test, RBAR, params=params)
               for n in ("kf", "kftncm", "vb", "oracle", "rkfnet")}
    for r in compare(filters, test, out):
        print(f"{r.filter:8s}{r.status:9s}{r.armse:.4f}")
    print(f"det(R_hat) = {np.linalg.det(r_hat(params.R_s)):.4f}, v = {float(params.v):.3f}, "
          f"sigma = {float(params.sigma):.3f}")


if __name__ == "__main__":
    main()
