"""Simulated datasets and their text serialisation.

File layout, one file per split::

    # rkflab-dataset v1
    {"N": ..., "T": ..., "model": {...}, "noise": {...}, ...}
    <base64 of little-endian float64 states then observations>   (one line per trajectory)
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .noise import NoiseSpec
from .statespace import GaussianBelief, StateSpaceModel, Trajectory, simulate

HEADER = "# rkflab-dataset v1"
SPLITS = ("train", "cv", "test")


@dataclass
class Dataset:
    states: np.ndarray  # (N, T, n)
    observations: np.ndarray  # (N, T, m)
    model: StateSpaceModel
    noise: NoiseSpec
    seed: int
    split: str
    init: GaussianBelief

    def __post_init__(self):
        if self.states.ndim != 3 or self.observations.ndim != 3:
            raise ValueError("dataset arrays must be (N, T, dim)")
        if self.states.shape[:2] != self.observations.shape[:2]:
            raise ValueError("states and observations disagree on N or T")

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def T(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.N

    @property
    def trajectories(self) -> list[Trajectory]:
        return [Trajectory(s, z) for s, z in zip(self.states, self.observations)]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.states[idx], self.observations[idx], self.model, self.noise,
                       self.seed, self.split, self.init)

    def metadata(self) -> dict:
        return {
            "N": self.N, "T": self.T,
            "n": self.states.shape[2], "m": self.observations.shape[2],
            "model": self.model.describe(), "noise": self.noise.describe(),
            "init": {"mean": self.init.mean.tolist(), "cov": self.init.cov.tolist()},
            "seed": self.seed, "split": self.split,
        }


def trajectory_rng(seed: int, split: str, j: int) -> np.random.Generator:
    """Independent stream per (split, trajectory), derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(SPLITS.index(split), j)))


def generate(model: StateSpaceModel, noise: NoiseSpec, init: GaussianBelief, N: int, T: int,
             seed: int, split: str) -> Dataset:
    if N < 1:
        raise ValueError("dataset size must be positive")
    trajs = [simulate(model, init, noise, T, trajectory_rng(seed, split, j)) for j in range(N)]
    return Dataset(np.stack([t.states for t in trajs]), np.stack([t.observations for t in trajs]),
                   model, noise, seed, split, init)


def generate_datasets(model: StateSpaceModel, noise: NoiseSpec, sizes, T: int, seed: int,
                      init: GaussianBelief) -> dict[str, Dataset]:
    return {split: generate(model, noise, init, N, T, seed, split) for split, N in zip(SPLITS, sizes)}


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(HEADER + "\n")
        fh.write(json.dumps(ds.metadata(), sort_keys=True) + "\n")
        for s, z in zip(ds.states, ds.observations):
            raw = s.astype("<f8").tobytes() + z.astype("<f8").tobytes()
            fh.write(base64.b64encode(raw).decode("ascii") + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != HEADER:
            raise ValueError(f"unrecognised dataset header {header!r}")
        meta = json.loads(fh.readline())
        N, T, n, m = meta["N"], meta["T"], meta["n"], meta["m"]
        states = np.empty((N, T, n))
        obs = np.empty((N, T, m))
        for j in range(N):
            raw = np.frombuffer(base64.b64decode(fh.readline().strip()), dtype="<f8")
            states[j] = raw[:T * n].reshape(T, n)
            obs[j] = raw[T * n:].reshape(T, m)
    init = GaussianBelief(np.array(meta["init"]["mean"]), np.array(meta["init"]["cov"]))
    return Dataset(states, obs, StateSpaceModel.from_description(meta["model"]),
                   NoiseSpec.from_description(meta["noise"]), meta["seed"], meta["split"], init)
