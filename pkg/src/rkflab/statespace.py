"""Linear Gaussian state-space models, belief prediction and trajectory simulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import NoiseSpec, sample


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


@dataclass(frozen=True)
class StateSpaceModel:
    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        F, H, Q = (np.asarray(a, dtype=float) for a in (self.F, self.H, self.Q))
        n = F.shape[0]
        if F.shape != (n, n) or Q.shape != (n, n) or H.ndim != 2 or H.shape[1] != n:
            raise ValueError(f"inconsistent shapes F{F.shape} H{H.shape} Q{Q.shape}")
        if not np.allclose(Q, Q.T):
            raise ValueError("Q must be symmetric")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "Q", Q)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def describe(self) -> dict:
        return {"F": self.F.tolist(), "H": self.H.tolist(), "Q": self.Q.tolist()}

    @classmethod
    def from_description(cls, d: dict) -> "StateSpaceModel":
        return cls(np.array(d["F"]), np.array(d["H"]), np.array(d["Q"]))


@dataclass(frozen=True)
class GaussianBelief:
    """State estimate ``N(mean, cov)``.

    ``mean`` may carry leading batch dimensions, ``(..., n)`` with ``cov``
    shaped ``(..., n, n)``; the filters operate on whole batches at once.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    def batch(self, size: int) -> "GaussianBelief":
        """Broadcast an unbatched belief to ``size`` copies."""
        n = self.mean.shape[-1]
        return GaussianBelief(
            np.broadcast_to(self.mean, (size, n)).copy(),
            np.broadcast_to(self.cov, (size, n, n)).copy(),
        )


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (T, n)
    observations: np.ndarray  # (T, m)

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        z = np.asarray(self.observations, dtype=float)
        if s.ndim != 2 or z.ndim != 2 or len(s) != len(z) or len(s) < 1:
            raise ValueError("states and observations must be (T, n) and (T, m) with T >= 1")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "observations", z)

    @property
    def T(self) -> int:
        return len(self.states)


def cv_model(dt: float = 1.0, q: float = 0.1) -> StateSpaceModel:
    """Planar constant-velocity model with position-only measurements.

    State ordering is ``[px, py, vx, vy]``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    I2, Z2 = np.eye(2), np.zeros((2, 2))
    F = np.block([[I2, dt * I2], [Z2, I2]])
    H = np.block([[I2, Z2]])
    Q = q * np.block([[dt**3 / 3 * I2, dt**2 / 2 * I2], [dt**2 / 2 * I2, dt * I2]])
    return StateSpaceModel(F, H, Q)


def cv_initial_belief() -> GaussianBelief:
    """Initial belief shared by the simulator and all filters."""
    return GaussianBelief(np.array([0.0, 0.0, 10.0, 10.0]), np.diag([25.0, 25.0, 2.0, 2.0]))


def predict(belief: GaussianBelief, model: StateSpaceModel) -> GaussianBelief:
    mean = belief.mean @ model.F.T
    cov = model.F @ belief.cov @ model.F.T + model.Q
    return GaussianBelief(mean, symmetrize(cov))


def _psd_root(cov: np.ndarray) -> np.ndarray:
    # eigh tolerates the singular covariances that cholesky rejects
    w, V = np.linalg.eigh(cov)
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate(model: StateSpaceModel, init: GaussianBelief, noise: NoiseSpec, T: int,
             rng: np.random.Generator) -> Trajectory:
    """Roll the model forward ``T`` steps from a draw of ``init``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    x = init.mean + _psd_root(init.cov) @ rng.standard_normal(model.n)
    w = rng.standard_normal((T, model.n)) @ _psd_root(model.Q).T
    states = np.empty((T, model.n))
    for k in range(T):
        x = model.F @ x + w[k]
        states[k] = x
    obs = states @ model.H.T + sample(noise, rng, size=T)
    return Trajectory(states, obs)
