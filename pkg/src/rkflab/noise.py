"""Heavy-tailed measurement noise: Gaussian mixture, Student-t and sub-Gaussian alpha-stable.

All three families are Gaussian scale mixtures ``v = sqrt(lam) * N(0, R)``
with different laws for the mixing variable ``lam``.  The alpha-stable
laws use the 1-parameterization ``S(alpha, beta, gamma, delta)`` in which
``alpha = 2`` is a Gaussian with variance ``2 gamma^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("gaussian", "gm", "st", "sgas")


class NoMixingDensity(ValueError):
    pass


class InfiniteVariance(ValueError):
    """The requested noise has no finite covariance."""


@dataclass(frozen=True)
class NoiseSpec:
    family: str
    scale: np.ndarray
    U: float = 1.0
    p_out: float = 0.1
    v: float = 1.0
    alpha: float = 2.0

    def __post_init__(self):
        scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        object.__setattr__(self, "scale", scale)
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if scale.shape[0] != scale.shape[1] or not np.allclose(scale, scale.T):
            raise ValueError("scale must be a symmetric square matrix")
        if np.linalg.eigvalsh(scale).min() <= 0:
            raise ValueError("scale must be positive definite")
        if self.family == "gm" and not (self.U >= 1 and 0 <= self.p_out <= 1):
            raise ValueError("GM noise needs U >= 1 and 0 <= p_out <= 1")
        if self.family == "st" and not self.v > 0:
            raise ValueError("Student-t noise needs v > 0")
        if self.family == "sgas" and not 0 < self.alpha <= 2:
            raise ValueError("SGaS noise needs 0 < alpha <= 2")

    @property
    def m(self) -> int:
        return self.scale.shape[0]

    @classmethod
    def gaussian(cls, scale) -> "NoiseSpec":
        return cls("gaussian", scale)

    @classmethod
    def gm(cls, scale, U: float, p_out: float = 0.1) -> "NoiseSpec":
        return cls("gm", scale, U=U, p_out=p_out)

    @classmethod
    def student_t(cls, scale, v: float) -> "NoiseSpec":
        return cls("st", scale, v=v)

    @classmethod
    def sgas(cls, scale, alpha: float) -> "NoiseSpec":
        return cls("sgas", scale, alpha=alpha)

    def describe(self) -> dict:
        d = {"family": self.family, "scale": self.scale.tolist()}
        if self.family == "gm":
            d.update(U=self.U, p_out=self.p_out)
        elif self.family == "st":
            d["v"] = self.v
        elif self.family == "sgas":
            d["alpha"] = self.alpha
        return d

    @classmethod
    def from_description(cls, d: dict) -> "NoiseSpec":
        d = dict(d)
        return cls(d.pop("family"), np.array(d.pop("scale")), **d)

    def label(self) -> str:
        return {
            "gaussian": "gaussian",
            "gm": f"gm(U={self.U:g},p={self.p_out:g})",
            "st": f"st(v={self.v:g})",
            "sgas": f"sgas(alpha={self.alpha:g})",
        }[self.family]


@dataclass(frozen=True)
class Mixing:
    """Prior of the mixing variable ``lam``.

    ``kind`` is ``"point"`` (lam = 1), ``"discrete"`` (``values`` with
    ``weights``) or ``"invgamma"`` (shape = rate = ``v / 2``).
    """

    kind: str
    values: tuple = ()
    weights: tuple = ()
    v: float = field(default=float("nan"))


def mixing_of(spec: NoiseSpec) -> Mixing:
    if spec.family == "gaussian":
        return Mixing("point")
    if spec.family == "gm":
        return Mixing("discrete", (1.0, float(spec.U)), (1.0 - spec.p_out, spec.p_out))
    if spec.family == "st":
        return Mixing("invgamma", v=float(spec.v))
    raise NoMixingDensity("the alpha-stable mixing density has no closed form here")


def gamma_sample(shape: float, rng: np.random.Generator, size=None, rate: float = 1.0):
    """Marsaglia-Tsang squeeze sampler; shapes below one use the ``U**(1/a)`` boost."""
    if shape <= 0 or rate <= 0:
        raise ValueError("shape and rate must be positive")
    count = 1 if size is None else int(np.prod(size))
    boost = shape < 1
    a = shape + 1.0 if boost else shape
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(count)
    todo = np.arange(count)
    while todo.size:
        x = rng.standard_normal(todo.size)
        u = rng.random(todo.size)
        v = (1.0 + c * x) ** 3
        ok = v > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            logv = np.log(np.where(ok, v, 1.0))
            accept = ok & (
                (u < 1.0 - 0.0331 * x**4) | (np.log(u) < 0.5 * x**2 + d * (1.0 - v + logv))
            )
        out[todo[accept]] = d * v[accept]
        todo = todo[~accept]
    if boost:
        out *= rng.random(count) ** (1.0 / shape)
    out /= rate
    return out[0] if size is None else out.reshape(size)


def stable_sample(alpha: float, beta: float, gamma: float, delta: float,
                  rng: np.random.Generator, size=None):
    """Chambers-Mallows-Stuck draw from ``S(alpha, beta, gamma, delta)``."""
    if not (0 < alpha <= 2 and -1 <= beta <= 1 and gamma > 0):
        raise ValueError("need 0 < alpha <= 2, -1 <= beta <= 1, gamma > 0")
    if alpha == 2:
        return delta + gamma * math.sqrt(2.0) * rng.standard_normal(size)
    V = rng.uniform(-math.pi / 2, math.pi / 2, size)
    W = rng.standard_exponential(size)
    if alpha == 1:
        hb = math.pi / 2 + beta * V
        X = (2 / math.pi) * (hb * np.tan(V) - beta * np.log((math.pi / 2) * W * np.cos(V) / hb))
        return gamma * X + (2 / math.pi) * beta * gamma * math.log(gamma) + delta
    t = beta * math.tan(math.pi * alpha / 2)
    B = math.atan(t) / alpha
    S = (1 + t * t) ** (1 / (2 * alpha))
    X = (S * np.sin(alpha * (V + B)) / np.cos(V) ** (1 / alpha)
         * (np.cos(V - alpha * (V + B)) / W) ** ((1 - alpha) / alpha))
    return gamma * X + delta


def sgas_mixing_scale(alpha: float) -> float:
    return 2.0 * math.cos(math.pi * alpha / 4) ** (2.0 / alpha)


def sample(spec: NoiseSpec, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw noise vectors; shape ``(m,)`` or ``(size, m)``."""
    count = 1 if size is None else int(size)
    m = spec.m
    L = np.linalg.cholesky(spec.scale)
    g = rng.standard_normal((count, m)) @ L.T
    if spec.family == "gaussian":
        out = g
    elif spec.family == "gm":
        outlier = rng.random(count) < spec.p_out
        out = g * np.where(outlier, math.sqrt(spec.U), 1.0)[:, None]
    elif spec.family == "st":
        w = gamma_sample(spec.v / 2, rng, size=count, rate=spec.v / 2)
        out = g / np.sqrt(w)[:, None]
    else:
        if spec.alpha == 2:
            A = np.full(count, 2.0)
        else:
            A = stable_sample(spec.alpha / 2, 1.0, sgas_mixing_scale(spec.alpha), 0.0, rng, count)
        out = g * np.sqrt(A)[:, None]
    return out[0] if size is None else out


def true_covariance(spec: NoiseSpec) -> np.ndarray:
    R = spec.scale
    if spec.family == "gaussian":
        return R.copy()
    if spec.family == "gm":
        return ((1 - spec.p_out) + spec.p_out * spec.U) * R
    if spec.family == "st":
        if spec.v <= 2:
            raise InfiniteVariance(f"Student-t with v={spec.v} has no finite covariance")
        return spec.v / (spec.v - 2) * R
    if spec.alpha < 2:
        raise InfiniteVariance(f"alpha-stable noise with alpha={spec.alpha} has infinite variance")
    return 2.0 * R
