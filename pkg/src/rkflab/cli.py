"""Command-line entry point: ``rkflab {simulate,train,run-filter,evaluate,compare} CONFIG``.

Exit codes: 0 success, 2 divergence (training or filter), 3 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import REFERENCES, ConfigError, ExperimentConfig, load_config, with_overrides
from .datasets import SPLITS, generate_datasets, load_dataset, save_dataset
from .evaluation import FILTERS, compare, evaluate_filter, make_filter, write_reports
from .filters import FixedPointControl, kf_filter, oracle_filter, vb_rkf_filter
from .nn import load_arrays, save_arrays
from .noise import NoMixingDensity
from .rkfnet import RKFNetParams
from .statespace import cv_initial_belief
from .training import LOSSES, AllRunsFailed, train_runs, write_training_log

log = logging.getLogger("rkflab")

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG = 0, 2, 3
CHECKPOINT = "rkfnet.rkfn"


class Diverged(RuntimeError):
    pass


def dataset_path(out: Path, split: str) -> Path:
    return out / f"{split}.rkflab"


def simulate(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    data = generate_datasets(model, cfg.build_noise(), cfg.data.sizes, cfg.data.T, cfg.seed,
                             cv_initial_belief())
    for split, ds in data.items():
        save_dataset(ds, dataset_path(out, split))
    log.info("wrote %s", ", ".join(f"{s}={len(d)}" for s, d in data.items()))
    return data


def datasets(cfg: ExperimentConfig) -> dict:
    """Datasets from the output directory, simulated first if any split is missing."""
    out = Path(cfg.out)
    if not all(dataset_path(out, s).exists() for s in SPLITS):
        return simulate(cfg)
    data = {s: load_dataset(dataset_path(out, s)) for s in SPLITS}
    expected = cfg.build_noise().describe()
    for (split, ds), N in zip(data.items(), cfg.data.sizes):
        if (ds.seed, ds.N, ds.T, ds.noise.describe()) != (cfg.seed, N, cfg.data.T, expected):
            raise ConfigError(f"{dataset_path(out, split)} was generated from a different "
                              "configuration; rerun simulate or choose another --out")
    return data


def reference_beliefs(cfg: ExperimentConfig, ds):
    R = cfg.noise_scale()
    if cfg.reference == "vb":
        return vb_rkf_filter(ds.model, R, cfg.filters.vb_dof, FixedPointControl(), ds.observations,
                             ds.init)
    if cfg.reference == "kf":
        return kf_filter(ds.model, R, ds.observations, ds.init)
    try:
        return oracle_filter(ds.model, ds.noise, ds.observations, ds.init, R)
    except NoMixingDensity as exc:
        raise ConfigError(f"oracle reference unavailable: {exc}") from exc


def train(cfg: ExperimentConfig) -> RKFNetParams:
    data = datasets(cfg)
    out = Path(cfg.out)
    ref = reference_beliefs(cfg, data["train"])
    try:
        params, runs, best = train_runs(data["train"].model, data["train"].init, data["train"],
                                        data["cv"], ref, cfg.training)
    except AllRunsFailed as exc:
        raise Diverged(str(exc)) from exc
    with open(out / "training_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["run", "status", "final_cv_armse", "selected"])
        for r, run in enumerate(runs):
            if run is None:
                w.writerow([r, "diverged", "", 0])
            else:
                write_training_log(run[1], out / f"training_log_run{r}.tsv")
                w.writerow([r, "ok", repr(run[1].final_cv), int(r == best)])
    save_arrays(out / CHECKPOINT, params.checkpoint_arrays())
    log.info("selected run %d of %d", best, len(runs))
    return params


def load_params(path) -> RKFNetParams:
    return RKFNetParams.from_checkpoint_arrays(load_arrays(path))


def _checkpoint(cfg, path) -> Path:
    return Path(path) if path else Path(cfg.out) / CHECKPOINT


def run_filter(cfg: ExperimentConfig, name: str, checkpoint=None) -> float:
    test = datasets(cfg)["test"]
    params = load_params(_checkpoint(cfg, checkpoint)) if name == "rkfnet" else None
    fn = make_filter(name, test, cfg.noise_scale(), cfg.filters.vb_dof, params)
    report = evaluate_filter(name, fn, test)
    if report.status == "skipped":
        raise ConfigError(f"{name} is undefined for this noise: {report.note}")
    if not report.ok:
        raise Diverged(f"{name}: {report.note}")
    est = report.estimates
    out = Path(cfg.out)
    with open(out / f"estimates_{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["trajectory", "k"] + [f"x{i}" for i in range(test.model.n)])
        for j, traj in enumerate(est.mean):
            for k, x in enumerate(traj, start=1):
                w.writerow([j, k] + [repr(float(v)) for v in x])
    print(f"{name}\tarmse={report.armse!r}")
    return report.armse


def evaluate(cfg: ExperimentConfig, checkpoint=None):
    test = datasets(cfg)["test"]
    params = load_params(_checkpoint(cfg, checkpoint))
    report = evaluate_filter("rkfnet", make_filter("rkfnet", test, cfg.noise_scale(), params=params),
                             test)
    write_reports([report], test, Path(cfg.out) / "evaluation")
    if not report.ok:
        raise Diverged(report.note)
    print(f"rkfnet\tarmse={report.armse!r}")
    return report


def compare_all(cfg: ExperimentConfig, checkpoint=None):
    test = datasets(cfg)["test"]
    ckpt = _checkpoint(cfg, checkpoint)
    filters = {}
    for name in cfg.filters.names:
        if name == "rkfnet":
            if not ckpt.exists():
                log.warning("no checkpoint at %s; rkfnet left out of the comparison", ckpt)
                continue
            filters[name] = make_filter(name, test, cfg.noise_scale(), params=load_params(ckpt))
        else:
            filters[name] = make_filter(name, test, cfg.noise_scale(), cfg.filters.vb_dof)
    reports = compare(filters, test, Path(cfg.out) / "reports")
    for r in reports:
        print(f"{r.filter}\t{r.status}\tarmse={r.armse!r}")
    if any(r.status == "failed" for r in reports):
        raise Diverged("at least one filter failed")
    return reports


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rkflab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="TOML experiment file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--loss", choices=LOSSES)
        p.add_argument("--p-min", type=float, dest="p_min")
        p.add_argument("--reference", choices=REFERENCES)
        return p

    add("simulate", "generate train/cv/test datasets")
    add("train", "train RKFNet and write a checkpoint")
    run = add("run-filter", "run one filter on the test split")
    run.add_argument("--filter", choices=FILTERS, required=True, dest="filter_name")
    run.add_argument("--checkpoint")
    add("evaluate", "evaluate a trained checkpoint on the test split").add_argument("--checkpoint")
    add("compare", "compare all configured filters on the test split").add_argument("--checkpoint")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = with_overrides(load_config(args.config), args.seed, args.out, args.loss, args.p_min,
                             args.reference)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            simulate(cfg)
        elif args.command == "train":
            train(cfg)
        elif args.command == "run-filter":
            run_filter(cfg, args.filter_name, args.checkpoint)
        elif args.command == "evaluate":
            evaluate(cfg, args.checkpoint)
        else:
            compare_all(cfg, args.checkpoint)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (Diverged, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
