"""Training stability with and without reference beliefs fed in early.

``p_max = 0`` trains on the model's own rollouts from the first iteration;
the default schedule starts from the reference filter and hands over by
iteration 600.

    python scripts/uss_ablation.py --alpha 0.3
"""

import argparse

import numpy as np

from rkflab.datasets import generate_datasets
from rkflab.filters import FixedPointControl, vb_rkf_filter
from rkflab.noise import NoiseSpec
from rkflab.statespace import cv_initial_belief, cv_model
from rkflab.training import NonFiniteLoss, TrainingConfig, train

RBAR = 10 * np.eye(2)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alpha", type=float, default=0.3)
    ap.add_argument("--iterations", type=int, default=600)
    ap.add_argument("--p-min", type=float, nargs="+", default=[0.0, 0.2], dest="p_min")
    ap.add_argument("--sizes", type=int, nargs=3, default=[400, 100, 200])
    ap.add_argument("--T", type=int, default=50)
    ap.add_argument("--batch-size", type=int, default=200, dest="batch_size")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model, init = cv_model(), cv_initial_belief()
    data = generate_datasets(model, NoiseSpec.sgas(RBAR, args.alpha), args.sizes, args.T, args.seed,
                             init)
    ref = vb_rkf_filter(model, RBAR, 3.0, FixedPointControl(), data["train"].observations, init)
    settings = [("own rollouts only", dict(p_max=0.0, p_min=0.0))]
    settings += [(f"schedule, p_min={p:g}", dict(p_min=p)) for p in args.p_min]
    for label, kw in settings:
        cfg = TrainingConfig(iterations=args.iterations, runs=1, seed=args.seed,
                             batch_size=args.batch_size, **kw)
        try:
            _, hist = train(model, init, data["train"], data["cv"], ref, cfg)
        except NonFiniteLoss as exc:
            print(f"{label}: diverged ({exc})")
            continue
        print(f"{label}: cv armse {hist.cv[0][1]:.4g} -> {hist.final_cv:.4g}")


if __name__ == "__main__":
    main()
