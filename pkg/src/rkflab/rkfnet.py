"""Neural-network aided robust Kalman filter.

A Kalman update whose measurement covariance is ``c_hat * R_hat``: the
scalar ``c_hat`` (an estimate of ``1 / E[1/lam]``) comes from a small FCNN
fed with shrunk innovation features, and ``R_hat`` is a learned Gram
matrix.  All functions work on autodiff nodes or on plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .filters import pd_jitter
from .nn import FcnnParams, fcnn_forward, init_fcnn
from .statespace import GaussianBelief, StateSpaceModel

VARSIGMA = (300.0, 300.0, 300.0)


class MissingReference(ValueError):
    pass


def n_features(m: int) -> int:
    return m + m * (m + 1) // 2


@dataclass
class RKFNetParams:
    fcnn: FcnnParams
    R_s: object  # (m, m)
    v_prime: object
    sigma_prime: object
    varsigma: tuple = VARSIGMA

    def to_dict(self) -> dict:
        d = {}
        for i, (W, b) in enumerate(zip(self.fcnn.weights, self.fcnn.biases)):
            d[f"fcnn.W{i}"] = np.asarray(ad.value(W), dtype=float)
            d[f"fcnn.b{i}"] = np.asarray(ad.value(b), dtype=float)
        d["R_s"] = np.asarray(ad.value(self.R_s), dtype=float)
        d["v_prime"] = np.asarray(ad.value(self.v_prime), dtype=float)
        d["sigma_prime"] = np.asarray(ad.value(self.sigma_prime), dtype=float)
        return d

    @classmethod
    def from_dict(cls, d: dict, varsigma=VARSIGMA) -> "RKFNetParams":
        layers = sorted(int(k[len("fcnn.W"):]) for k in d if k.startswith("fcnn.W"))
        fcnn = FcnnParams([d[f"fcnn.W{i}"] for i in layers], [d[f"fcnn.b{i}"] for i in layers])
        return cls(fcnn, d["R_s"], d["v_prime"], d["sigma_prime"], tuple(varsigma))

    def on_tape(self, tape: ad.Tape) -> tuple["RKFNetParams", dict]:
        """Copy of the parameters as tape leaves, plus ``name -> leaf``."""
        leaves = {name: tape.leaf(arr) for name, arr in self.to_dict().items()}
        return RKFNetParams.from_dict(leaves, self.varsigma), leaves

    def checkpoint_arrays(self) -> dict:
        d = self.to_dict()
        for i, s in enumerate(self.varsigma, start=1):
            d[f"varsigma{i}"] = np.array(s)
        return d

    @classmethod
    def from_checkpoint_arrays(cls, d: dict) -> "RKFNetParams":
        varsigma = tuple(float(d[f"varsigma{i}"]) for i in (1, 2, 3))
        rest = {k: v for k, v in d.items() if not k.startswith("varsigma")}
        return cls.from_dict(rest, varsigma)

    @property
    def v(self):
        return ad.exp(self.varsigma[1] * self.v_prime)

    @property
    def sigma(self):
        return ad.exp(self.varsigma[2] * self.sigma_prime)


def init_params(m: int, rng: np.random.Generator, varsigma=VARSIGMA,
                v0: float = 3.0, sigma0: float = np.sqrt(10.0)) -> RKFNetParams:
    """Glorot FCNN, ``R_s ~ U[0, 1/varsigma1]``, loss parameters giving ``v0`` and ``sigma0``."""
    fcnn = init_fcnn(n_features(m), rng)
    R_s = rng.uniform(0.0, 1.0 / varsigma[0], (m, m))
    return RKFNetParams(fcnn, R_s, np.array(np.log(v0) / varsigma[1]),
                        np.array(np.log(sigma0) / varsigma[2]), tuple(varsigma))


def shrink(x):
    return ad.shrink(x)


def _triu(m: int):
    return np.triu_indices(m)


def features(dz, S0):
    """Shrunk innovation followed by the shrunk upper triangle of ``S0`` (row-major)."""
    m = np.shape(ad.value(dz))[-1]
    rows, cols = _triu(m)
    upper = ad.getitem(S0, (Ellipsis, rows, cols))
    return ad.concat([shrink(dz), shrink(upper)], axis=-1)


def r_hat(R_s, varsigma1: float = VARSIGMA[0]):
    M = varsigma1 * R_s
    return ad.matmul(M, ad.transpose(M))


def _sym(A):
    return 0.5 * (A + ad.transpose(A))


@dataclass
class StepOutput:
    mean: object  # (..., n) posterior mean
    cov: object
    innovation: object
    c_hat: object
    R_tilde: object

    @property
    def posterior(self) -> GaussianBelief:
        return GaussianBelief(ad.value(self.mean), ad.value(self.cov))


def _step(mean, cov, z, params: RKFNetParams, R_hat, model: StateSpaceModel) -> StepOutput:
    """One batched RKFNet step; ``mean`` is ``(B, n)``, ``cov`` ``(B, n, n)``."""
    F, H = model.F, model.H
    pm = ad.matmul(mean, F.T)
    P = _sym(ad.matmul(ad.matmul(F, cov), F.T) + model.Q)
    dz = z - ad.matmul(pm, H.T)
    PHt = ad.matmul(P, H.T)
    S0 = _sym(ad.matmul(H, PHt))
    c_hat = ad.exp(fcnn_forward(params.fcnn, features(dz, S0)))
    R_tilde = ad.reshape(c_hat, np.shape(ad.value(c_hat)) + (1, 1)) * R_hat
    S = S0 + R_tilde
    S = S + pd_jitter(ad.value(S))[..., None, None] * np.eye(model.m)
    K = ad.transpose(ad.solve(S, ad.transpose(PHt)))
    new_mean = pm + ad.matvec(K, dz)
    new_cov = _sym(ad.matmul(np.eye(model.n) - ad.matmul(K, H), P))
    return StepOutput(new_mean, new_cov, dz, c_hat, R_tilde)


def rkfnet_step(prev: GaussianBelief, z, params: RKFNetParams, model: StateSpaceModel) -> StepOutput:
    """Single step from a (possibly unbatched) numpy belief."""
    mean, cov, z = prev.mean, prev.cov, np.asarray(z, dtype=float)
    single = mean.ndim == 1
    if single:
        mean, cov, z = mean[None], cov[None], z[None]
    out = _step(mean, cov, z, params, r_hat(params.R_s, params.varsigma[0]), model)
    if single:
        out = StepOutput(*(x[0] for x in (out.mean, out.cov, out.innovation, out.c_hat, out.R_tilde)))
    return out


def rkfnet_forward(Z, init: GaussianBelief, params: RKFNetParams, model: StateSpaceModel,
                   reference: GaussianBelief | None = None, selector=None) -> list[StepOutput]:
    """Roll the filter over ``Z`` of shape ``(B, T, m)``.

    ``selector[b, k]`` True feeds step ``k`` with the reference posterior of
    step ``k - 1`` (the initial belief when ``k == 0``) instead of the
    filter's own posterior.  Reference beliefs are constants, so no gradient
    reaches earlier steps through a selected reference.
    """
    Z = np.asarray(Z, dtype=float)
    B, T, _ = Z.shape
    if selector is None:
        selector = np.zeros((B, T), dtype=bool)
    selector = np.asarray(selector, dtype=bool)
    if selector.shape != (B, T):
        raise ValueError(f"selector shape {selector.shape} != {(B, T)}")
    if reference is None and selector[:, 1:].any():
        raise MissingReference("selector picks a reference but none was given")
    R_hat = r_hat(params.R_s, params.varsigma[0])
    init = init.batch(B) if init.mean.ndim == 1 else init
    mean, cov = init.mean, init.cov
    outputs = []
    for k in range(T):
        if k > 0 and selector[:, k].any():
            sel = selector[:, k]
            mean = ad.where(sel[:, None], reference.mean[:, k - 1], mean)
            cov = ad.where(sel[:, None, None], reference.cov[:, k - 1], cov)
        out = _step(mean, cov, Z[:, k], params, R_hat, model)
        outputs.append(out)
        mean, cov = out.mean, out.cov
    return outputs


def posterior_means(outputs: list[StepOutput]) -> np.ndarray:
    """Stack the numeric posterior means into ``(B, T, n)``."""
    return np.stack([ad.value(o.mean) for o in outputs], axis=-2)


def rkfnet_filter(params: RKFNetParams, model: StateSpaceModel, Z, init: GaussianBelief) -> GaussianBelief:
    """Inference-time rollout (own posteriors only), matching the baseline filter output layout."""
    Z = np.asarray(Z, dtype=float)
    squeeze = Z.ndim == 2
    if squeeze:
        Z = Z[None]
    outs = rkfnet_forward(Z, init, params, model)
    mean = posterior_means(outs)
    cov = np.stack([ad.value(o.cov) for o in outs], axis=-3)
    if squeeze:
        mean, cov = mean[0], cov[0]
    return GaussianBelief(mean, cov)
