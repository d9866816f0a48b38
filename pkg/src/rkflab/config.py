"""Experiment configuration read from TOML.

Example::

    seed = 0
    out = "runs/gm100"

    [model]
    dt = 1.0
    q = 0.1

    [noise]
    family = "gm"       # gaussian | gm | st | sgas
    scale = 10.0        # multiple of the identity, or a full matrix
    U = 100.0

    [data]
    sizes = [400, 100, 200]
    T = 50

    [filters]
    names = ["kf", "kftncm", "vb", "oracle", "rkfnet"]
    vb_dof = 3.0

    [training]
    iterations = 600
    runs = 3
    reference = "vb"    # vb | kf | oracle
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import FILTERS
from .noise import NoiseSpec
from .statespace import cv_model
from .training import TrainingConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

REFERENCES = ("vb", "kf", "oracle")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    dt: float = 1.0
    q: float = 0.1


@dataclass
class NoiseConfig:
    family: str = "gm"
    scale: object = 10.0
    U: float = 100.0
    p_out: float = 0.1
    v: float = 1.0
    alpha: float = 2.0


@dataclass
class DataConfig:
    sizes: tuple = (400, 100, 200)
    T: int = 50


@dataclass
class FilterConfig:
    names: tuple = FILTERS
    vb_dof: float = 3.0


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    data: DataConfig = field(default_factory=DataConfig)
    filters: FilterConfig = field(default_factory=FilterConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    reference: str = "vb"

    def build_model(self):
        return cv_model(self.model.dt, self.model.q)

    def noise_scale(self) -> np.ndarray:
        s = np.asarray(self.noise.scale, dtype=float)
        return s * np.eye(2) if s.ndim == 0 else s

    def build_noise(self) -> NoiseSpec:
        n = self.noise
        return NoiseSpec(n.family, self.noise_scale(), U=n.U, p_out=n.p_out, v=n.v, alpha=n.alpha)

    def validate(self) -> "ExperimentConfig":
        try:
            self.build_model()
            self.build_noise()
            if self.data.T < 2 or len(self.data.sizes) != 3 or min(self.data.sizes) < 1:
                raise ValueError("data needs T >= 2 and three positive split sizes")
            unknown = set(self.filters.names) - set(FILTERS)
            if unknown:
                raise ValueError(f"unknown filters {sorted(unknown)}")
            if self.reference not in REFERENCES:
                raise ValueError(f"reference must be one of {REFERENCES}")
            if self.filters.vb_dof <= 0:
                raise ValueError("vb_dof must be positive")
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _section(cls, raw: dict, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    training = dict(raw.pop("training", {}))
    reference = training.pop("reference", "vb")
    top = {k: raw.pop(k) for k in ("seed", "out") if k in raw}
    sections = {
        "model": ModelConfig, "noise": NoiseConfig, "data": DataConfig, "filters": FilterConfig,
    }
    parts = {name: _section(cls, raw.pop(name, {}), name) for name, cls in sections.items()}
    if raw:
        raise ConfigError(f"unknown top-level keys: {sorted(raw)}")
    seed = top.get("seed", 0)
    training.setdefault("seed", seed)
    cfg = ExperimentConfig(seed=seed, out=top.get("out", "runs/default"),
                           training=_section(TrainingConfig, training, "training"),
                           reference=reference, **parts)
    cfg.data.sizes = tuple(cfg.data.sizes)
    cfg.filters.names = tuple(cfg.filters.names)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(Path(path), "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_dict(raw)


def with_overrides(cfg: ExperimentConfig, seed=None, out=None, loss=None, p_min=None,
                   reference=None) -> ExperimentConfig:
    """Copy of ``cfg`` with command-line overrides applied."""
    training = {}
    if seed is not None:
        training["seed"] = seed
    if loss is not None:
        training["loss"] = loss
    if p_min is not None:
        training["p_min"] = p_min
    try:
        new_training = dataclasses.replace(cfg.training, **training)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    new = dataclasses.replace(
        cfg, training=new_training,
        seed=cfg.seed if seed is None else seed,
        out=cfg.out if out is None else str(out),
        reference=cfg.reference if reference is None else reference,
    )
    return new.validate()
