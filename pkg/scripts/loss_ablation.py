"""CV ARMSE of models trained with the Student-t, L1 and L2 losses.

    python scripts/loss_ablation.py --alpha 0.5
"""

import argparse

import numpy as np

from rkflab.datasets import generate_datasets
from rkflab.filters import FixedPointControl, vb_rkf_filter
from rkflab.noise import NoiseSpec
from rkflab.statespace import cv_initial_belief, cv_model
from rkflab.training import TrainingConfig, train

RBAR = 10 * np.eye(2)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--iterations", type=int, default=600)
    ap.add_argument("--sizes", type=int, nargs=3, default=[400, 100, 200])
    ap.add_argument("--T", type=int, default=50)
    ap.add_argument("--batch-size", type=int, default=200, dest="batch_size")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model, init = cv_model(), cv_initial_belief()
    data = generate_datasets(model, NoiseSpec.sgas(RBAR, args.alpha), args.sizes, args.T, args.seed,
                             init)
    ref = vb_rkf_filter(model, RBAR, 3.0, FixedPointControl(), data["train"].observations, init)
    print("loss\tfinite\tcv_armse")
    for loss in ("st", "l1", "l2"):
        cfg = TrainingConfig(iterations=args.iterations, runs=1, loss=loss, seed=args.seed,
                             batch_size=args.batch_size)
        _, hist = train(model, init, data["train"], data["cv"], ref, cfg)
        print(f"{loss}\t{bool(np.all(np.isfinite(hist.loss)))}\t{hist.final_cv:.4f}")


if __name__ == "__main__":
    main()
