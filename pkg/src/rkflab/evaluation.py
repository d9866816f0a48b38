"""Filter comparison on a dataset and the CSV reports built from it.

Three files are written next to each other:

* ``summary.csv``: one row per filter with status and ARMSE.
* ``series.csv``: per-time position RMSE, one row per (filter, k).
* ``timing.csv``: wall-clock seconds per filtering pass with a machine
  descriptor.  It is the only report that differs between reruns.
"""

from __future__ import annotations

import csv
import logging
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .filters import (FixedPointControl, kf_filter, kftncm_filter, oracle_filter,
                      vb_rkf_filter)
from .metrics import rmse_series
from .noise import InfiniteVariance, NoMixingDensity
from .rkfnet import RKFNetParams, rkfnet_filter
from .statespace import GaussianBelief

log = logging.getLogger(__name__)

FILTERS = ("kf", "kftncm", "vb", "oracle", "rkfnet")
SUMMARY_HEADER = ["filter", "noise", "status", "armse", "log10_armse", "note"]
SERIES_HEADER = ["filter", "k", "rmse", "log10_rmse"]
TIMING_HEADER = ["filter", "seconds", "trajectories", "T", "machine"]

# failures of a single filter that do not stop a comparison
FILTER_ERRORS = (np.linalg.LinAlgError, ArithmeticError)


@dataclass
class MetricReport:
    filter: str
    noise: str
    status: str = "ok"  # ok | skipped | failed
    rmse: np.ndarray = field(default_factory=lambda: np.empty(0))
    armse: float = math.nan
    seconds: float = math.nan
    note: str = ""
    estimates: GaussianBelief | None = field(default=None, repr=False)

    @property
    def log10_armse(self) -> float:
        return math.log10(self.armse) if self.status == "ok" else math.nan

    @property
    def ok(self) -> bool:
        return self.status == "ok"


FilterFn = Callable[[np.ndarray, GaussianBelief], GaussianBelief]


def make_filter(name: str, dataset, R_nominal, vb_dof: float = 3.0,
                params: RKFNetParams | None = None,
                ctrl: FixedPointControl | None = None) -> FilterFn:
    """Filter by name, bound to the dataset's model and noise descriptor."""
    model, noise = dataset.model, dataset.noise
    R_nominal = np.asarray(R_nominal, dtype=float)
    ctrl = ctrl or FixedPointControl()
    if name == "kf":
        return lambda Z, init: kf_filter(model, R_nominal, Z, init)
    if name == "kftncm":
        return lambda Z, init: kftncm_filter(model, noise, Z, init)
    if name == "vb":
        return lambda Z, init: vb_rkf_filter(model, R_nominal, vb_dof, ctrl, Z, init)
    if name == "oracle":
        return lambda Z, init: oracle_filter(model, noise, Z, init, R_nominal)
    if name == "rkfnet":
        if params is None:
            raise ValueError("the rkfnet filter needs trained parameters")
        return lambda Z, init: rkfnet_filter(params, model, Z, init)
    raise ValueError(f"unknown filter {name!r}; expected one of {FILTERS}")


def evaluate_filter(name: str, fn: FilterFn, dataset) -> MetricReport:
    report = MetricReport(name, dataset.noise.label())
    try:
        start = time.perf_counter()
        est = fn(dataset.observations, dataset.init)
        report.seconds = time.perf_counter() - start
    except (InfiniteVariance, NoMixingDensity) as exc:
        log.info("skipping %s: %s", name, exc)
        report.status, report.note = "skipped", str(exc)
        return report
    except FILTER_ERRORS as exc:
        log.warning("%s failed: %s", name, exc)
        report.status, report.note = "failed", f"{type(exc).__name__}: {exc}"
        return report
    rmse = rmse_series(est, dataset.states)
    if not np.all(np.isfinite(rmse)):
        report.status, report.note = "failed", "non-finite estimates"
        return report
    report.rmse, report.armse, report.estimates = rmse, float(rmse.mean()), est
    return report


def compare(filters: dict[str, FilterFn], dataset, report_dir=None) -> list[MetricReport]:
    """Run every filter on ``dataset``; a failing filter is recorded and the rest proceed."""
    reports = [evaluate_filter(name, fn, dataset) for name, fn in filters.items()]
    if report_dir is not None:
        write_reports(reports, dataset, report_dir)
    return reports


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def machine_descriptor() -> str:
    return f"{platform.machine()} {platform.processor() or 'unknown-cpu'} python{platform.python_version()} numpy{np.__version__}"


def write_reports(reports: list[MetricReport], dataset, report_dir) -> None:
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(SUMMARY_HEADER)
        for r in reports:
            w.writerow([r.filter, r.noise, r.status, _fmt(r.armse), _fmt(r.log10_armse), r.note])
    with open(out / "series.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(SERIES_HEADER)
        for r in reports:
            for k, v in enumerate(r.rmse, start=1):
                w.writerow([r.filter, k, _fmt(v), _fmt(math.log10(v)) if v > 0 else ""])
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(TIMING_HEADER)
        machine = machine_descriptor()
        for r in reports:
            if r.ok:
                w.writerow([r.filter, _fmt(r.seconds), dataset.N, dataset.T, machine])


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
