"""Position RMSE and ARMSE over a set of trajectories."""

from __future__ import annotations

import numpy as np

from .statespace import GaussianBelief

POSITION = (0, 1)


def _means(estimates) -> np.ndarray:
    if isinstance(estimates, GaussianBelief):
        estimates = estimates.mean
    return np.asarray(estimates, dtype=float)


def _states(truths) -> np.ndarray:
    if isinstance(truths, (list, tuple)) and truths and hasattr(truths[0], "states"):
        return np.stack([t.states for t in truths])
    return np.asarray(getattr(truths, "states", truths), dtype=float)


def _squared_position_error(estimates, truths, position=POSITION) -> np.ndarray:
    est, true = _means(estimates), _states(truths)
    if est.shape != true.shape:
        raise ValueError(f"estimate shape {est.shape} does not match truth shape {true.shape}")
    if est.ndim == 2:
        est, true = est[None], true[None]
    idx = list(position)
    return ((est[..., idx] - true[..., idx]) ** 2).sum(-1)  # (N, T)


def rmse_series(estimates, truths, position=POSITION) -> np.ndarray:
    """Per-time RMSE over trajectories, shape ``(T,)``."""
    return np.sqrt(_squared_position_error(estimates, truths, position).mean(axis=0))


def rmse_position(estimates, truths, k: int, position=POSITION) -> float:
    return float(rmse_series(estimates, truths, position)[k])


def armse(estimates, truths, position=POSITION) -> float:
    return float(rmse_series(estimates, truths, position).mean())
