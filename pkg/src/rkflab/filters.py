"""Model-based filters: Kalman update, KF with the true noise covariance, a
variational-Bayes Student-t robust KF, and a quadrature oracle for ``E[1/lam]``.

Every filter is vectorised over a leading batch axis.  Observation arrays are
``(T, m)`` or ``(B, T, m)``; filtered sequences come back as a
:class:`GaussianBelief` whose mean is ``(..., T, n)`` and cov ``(..., T, n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .noise import Mixing, NoiseSpec, mixing_of, true_covariance
from .statespace import GaussianBelief, StateSpaceModel, predict, symmetrize


class SingularInnovation(np.linalg.LinAlgError):
    """Innovation covariance stays singular after the maximum jitter."""


class QuadratureFailure(ArithmeticError):
    pass


JITTER_START = 1e-12
JITTER_MAX = 1e-6


def _pd_mask(S: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        finite = np.isfinite(S).all(axis=(-2, -1))
        S = np.where(finite[..., None, None], S, 0.0)
        return finite & (np.linalg.eigvalsh(S)[..., 0] > 0)


def pd_jitter(S: np.ndarray) -> np.ndarray:
    """Diagonal loading needed to make each ``S`` in a batch positive definite.

    Tries no loading first, then ``1e-12 * tr(S)/m`` escalated by factors of
    ten up to ``1e-6 * tr(S)/m``.
    """
    try:
        np.linalg.cholesky(S)
        return np.zeros(S.shape[:-2])
    except np.linalg.LinAlgError:
        pass
    m = S.shape[-1]
    scale = np.abs(np.trace(S, axis1=-2, axis2=-1)) / m
    eye = np.eye(m)
    jitter = np.zeros(S.shape[:-2])
    bad = ~_pd_mask(S)
    level = JITTER_START
    while bad.any() and level <= JITTER_MAX * (1 + 1e-9):
        jitter = np.where(bad, level * scale, jitter)
        bad = ~_pd_mask(S + jitter[..., None, None] * eye)
        level *= 10
    if bad.any():
        raise SingularInnovation(f"{int(bad.sum())} innovation covariance(s) not invertible")
    return jitter


@dataclass(frozen=True)
class KfUpdateResult:
    posterior: GaussianBelief
    gain: np.ndarray
    innovation: np.ndarray
    innovation_cov: np.ndarray


@dataclass(frozen=True)
class FixedPointControl:
    max_iters: int = 50
    tol: float = 1e-2
    window: int = 4

    def __post_init__(self):
        if self.max_iters < 1 or self.tol <= 0 or self.window < 1:
            raise ValueError("need max_iters >= 1, tol > 0, window >= 1")


def kf_update(pred: GaussianBelief, z, R_eff, model: StateSpaceModel) -> KfUpdateResult:
    H = model.H
    P = pred.cov
    innov = np.asarray(z, dtype=float) - pred.mean @ H.T
    PHt = P @ H.T
    S = H @ PHt + R_eff
    S = S + pd_jitter(S)[..., None, None] * np.eye(model.m)
    # K = P H^T S^-1 = (S^-1 H P)^T for symmetric S and P
    K = np.swapaxes(np.linalg.solve(S, np.swapaxes(PHt, -1, -2)), -1, -2)
    mean = pred.mean + (K @ innov[..., None])[..., 0]
    cov = symmetrize((np.eye(model.n) - K @ H) @ P)
    return KfUpdateResult(GaussianBelief(mean, cov), K, innov, S)


def _as_observations(data) -> np.ndarray:
    """Accept a Trajectory, a list of them, or a raw ``(..., T, m)`` array."""
    if hasattr(data, "observations"):
        return data.observations
    if isinstance(data, (list, tuple)) and data and hasattr(data[0], "observations"):
        return np.stack([t.observations for t in data])
    return np.asarray(data, dtype=float)


def _run(Z, init: GaussianBelief, model: StateSpaceModel, update) -> GaussianBelief:
    Z = _as_observations(Z)
    batch = Z.shape[:-2]
    T = Z.shape[-2]
    belief = GaussianBelief(
        np.broadcast_to(init.mean, batch + (model.n,)),
        np.broadcast_to(init.cov, batch + (model.n, model.n)),
    )
    means = np.empty(batch + (T, model.n))
    covs = np.empty(batch + (T, model.n, model.n))
    for k in range(T):
        pred = predict(belief, model)
        belief = update(pred, Z[..., k, :]).posterior
        means[..., k, :] = belief.mean
        covs[..., k, :, :] = belief.cov
    return GaussianBelief(means, covs)


def kf_filter(model: StateSpaceModel, R, Z, init: GaussianBelief) -> GaussianBelief:
    """Plain Kalman filter with a fixed measurement covariance."""
    return _run(Z, init, model, lambda pred, z: kf_update(pred, z, R, model))


def kftncm_filter(model: StateSpaceModel, noise: NoiseSpec, Z, init: GaussianBelief) -> GaussianBelief:
    """Kalman filter supplied with the noise's true covariance."""
    return kf_filter(model, true_covariance(noise), Z, init)


def vb_rkf_step(pred: GaussianBelief, z, R, v: float, ctrl: FixedPointControl,
                model: StateSpaceModel, return_scale: bool = False):
    """Variational-Bayes Student-t measurement update.

    Alternates a Kalman update with ``R / E[1/lam]`` and the conjugate
    refresh ``E[1/lam] = (v + m) / (v + tr(D R^-1))`` where ``D`` is the
    expected residual outer product.  Rows of a batch stop independently.
    """
    if v <= 0:
        raise ValueError("v must be positive")
    H, m = model.H, model.m
    R = np.asarray(R, dtype=float)
    Rinv = np.linalg.inv(R)
    batch = pred.mean.shape[:-1]
    e_inv = np.ones(batch)
    active = np.ones(batch, dtype=bool)
    result = None
    history = []
    for it in range(ctrl.max_iters):
        new = kf_update(pred, z, R / e_inv[..., None, None], model)
        if result is None:
            result = new
        else:
            sel = active[..., None]
            result = KfUpdateResult(
                GaussianBelief(np.where(sel, new.posterior.mean, result.posterior.mean),
                               np.where(sel[..., None], new.posterior.cov, result.posterior.cov)),
                np.where(sel[..., None], new.gain, result.gain),
                new.innovation,
                np.where(sel[..., None], new.innovation_cov, result.innovation_cov),
            )
        history.append(result.posterior.mean)
        r = np.asarray(z) - result.posterior.mean @ H.T
        D = r[..., :, None] * r[..., None, :] + H @ result.posterior.cov @ H.T
        e_new = (v + m) / (v + np.trace(D @ Rinv, axis1=-2, axis2=-1))
        active = active & ~_rel_change_ok(history, ctrl)
        if not active.any() or it == ctrl.max_iters - 1:
            break
        e_inv = np.where(active, e_new, e_inv)
    if return_scale:
        return result, e_inv
    return result


def _rel_change_ok(history: list, ctrl: FixedPointControl) -> np.ndarray:
    batch = history[-1].shape[:-1]
    if len(history) < ctrl.window + 1:
        return np.zeros(batch, dtype=bool)
    worst = np.zeros(batch)
    for a, b in zip(history[-ctrl.window - 1:-1], history[-ctrl.window:]):
        rel = np.linalg.norm(b - a, axis=-1) / np.maximum(np.linalg.norm(b, axis=-1), 1e-12)
        worst = np.maximum(worst, rel)
    return worst < ctrl.tol


def vb_rkf_filter(model: StateSpaceModel, R, v: float, ctrl: FixedPointControl, Z,
                  init: GaussianBelief) -> GaussianBelief:
    return _run(Z, init, model, lambda pred, z: vb_rkf_step(pred, z, R, v, ctrl, model))


QUAD_NODES = 2000
QUAD_RANGE = (1e-6, 1e6)


def _log_gauss_over_lambda(dz, S0, R, lam):
    """``log N(dz; 0, S0 + lam R)`` for every ``lam``; result ``(..., len(lam))``."""
    m = R.shape[-1]
    L = np.linalg.cholesky(R)
    Linv = np.linalg.inv(L)
    A = symmetrize(Linv @ S0 @ Linv.T)
    a, U = np.linalg.eigh(A)
    a = np.clip(a, 0.0, None)
    y = np.swapaxes(U, -1, -2) @ (Linv @ dz[..., None])
    y2 = y[..., 0] ** 2
    denom = a[..., None, :] + np.asarray(lam)[..., :, None]  # (..., G, m)
    logdet_L = np.log(np.diag(L)).sum()
    return (-0.5 * m * np.log(2 * np.pi) - logdet_L
            - 0.5 * np.log(denom).sum(-1) - 0.5 * (y2[..., None, :] / denom).sum(-1))


def oracle_e_inv_lambda(dz, S0, R, mixing: Mixing) -> np.ndarray:
    """Posterior mean of ``1/lam`` given the innovation, by exact sum or log-domain quadrature.

    The posterior is ``p(lam | dz) ∝ N(dz; 0, S0 + lam R) pi(lam)``.
    """
    dz = np.asarray(dz, dtype=float)
    S0 = np.asarray(S0, dtype=float)
    R = np.asarray(R, dtype=float)
    batch = np.broadcast_shapes(dz.shape[:-1], S0.shape[:-2])
    if mixing.kind == "point":
        return np.ones(batch)
    if mixing.kind == "discrete":
        lam = np.asarray(mixing.values, dtype=float)
        logw = np.log(np.asarray(mixing.weights, dtype=float))
        logp = _log_gauss_over_lambda(dz, S0, R, lam) + logw
        norm = logsumexp(logp, axis=-1, keepdims=True)
        return (np.exp(logp - norm) / lam).sum(-1)
    if mixing.kind == "invgamma":
        u = np.linspace(np.log(QUAD_RANGE[0]), np.log(QUAD_RANGE[1]), QUAD_NODES)
        lam = np.exp(u)
        half = mixing.v / 2
        log_prior = half * np.log(half) - gammaln(half) - (half + 1) * u - half / lam
        # integrate over u = log lam, so the Jacobian contributes lam
        logf = _log_gauss_over_lambda(dz, S0, R, lam) + log_prior + u
        logw = np.zeros(QUAD_NODES)
        logw[[0, -1]] = np.log(0.5)
        logf = logf + logw
        norm = logsumexp(logf, axis=-1)
        if not np.all(np.isfinite(norm)):
            raise QuadratureFailure("posterior normaliser underflowed")
        return np.exp(logsumexp(logf - u, axis=-1) - norm)
    raise ValueError(f"unsupported mixing kind {mixing.kind!r}")


def oracle_filter(model: StateSpaceModel, noise: NoiseSpec, Z, init: GaussianBelief,
                  R_nominal) -> GaussianBelief:
    """Robust KF that uses the exact posterior ``E[1/lam]`` of the true mixing density."""
    mixing = mixing_of(noise)
    R_nominal = np.asarray(R_nominal, dtype=float)
    H = model.H

    def update(pred, z):
        dz = z - pred.mean @ H.T
        S0 = symmetrize(H @ pred.cov @ H.T)
        e_inv = oracle_e_inv_lambda(dz, S0, R_nominal, mixing)
        return kf_update(pred, z, R_nominal / e_inv[..., None, None], model)

    return _run(Z, init, model, update)
