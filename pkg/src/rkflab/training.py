"""Unsupervised training: Student-t innovation loss, scheduled sampling with
reference-filter beliefs, Adam, and multi-run model selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .metrics import armse
from .nn import AdamState, activation_pattern, adam_step, learning_rate
from .rkfnet import RKFNetParams, init_params, r_hat, rkfnet_filter, rkfnet_forward
from .statespace import GaussianBelief, StateSpaceModel

log = logging.getLogger(__name__)

LOSSES = ("st", "l1", "l2")


class NonFiniteLoss(FloatingPointError):
    pass


class AllRunsFailed(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    iterations: int = 2000
    batch_size: int = 200
    base_rate: float = 2e-4
    rate_halving_period: int = 400
    p_max: float = 1.0
    p_min: float = 0.0
    dp: float = 1.0 / 600.0
    gamma1: float = 0.1
    gamma2: float = 1e-4
    runs: int = 5
    seed: int = 0
    loss: str = "st"
    cv_every: int = 100

    def __post_init__(self):
        if not 0 <= self.p_min <= self.p_max <= 1:
            raise ValueError("need 0 <= p_min <= p_max <= 1")
        if self.dp < 0 or self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("dp, gamma1 and gamma2 must be non-negative")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.iterations < 0 or self.batch_size < 1 or self.runs < 1 or self.cv_every < 1:
            raise ValueError("iterations >= 0, batch_size >= 1, runs >= 1, cv_every >= 1")


@dataclass
class TrainingHistory:
    loss: list = field(default_factory=list)
    p: list = field(default_factory=list)
    rate: list = field(default_factory=list)
    cv: list = field(default_factory=list)  # (iteration, armse)
    selected_run: int | None = None

    @property
    def final_cv(self) -> float:
        return self.cv[-1][1]

    def log_lines(self) -> list[str]:
        lines = [f"{t}\t{p!r}\t{loss!r}\t{rate!r}"
                 for t, (p, loss, rate) in enumerate(zip(self.p, self.loss, self.rate))]
        lines += [f"cv\t{t}\t{score!r}" for t, score in self.cv]
        return lines


def write_training_log(history: TrainingHistory, path) -> None:
    """Tab-separated: ``iteration, p_t, loss, rate`` rows, then ``cv, iteration, armse`` rows."""
    with open(path, "w", newline="\n") as fh:
        fh.write("# iteration\tp_t\tloss\trate\n")
        for line in history.log_lines():
            fh.write(line + "\n")


def st_nll(x, v, sigma):
    """Elementwise ``-log st(x; v, sigma)`` for the univariate Student-t."""
    if np.any(~(np.asarray(ad.value(v)) > 0)) or np.any(~(np.asarray(ad.value(sigma)) > 0)):
        raise ad.DomainError("Student-t needs v > 0 and sigma > 0")
    r = x / sigma
    return (ad.lgamma(0.5 * v) - ad.lgamma(0.5 * (v + 1.0)) + 0.5 * ad.log(v * math.pi)
            + ad.log(sigma) + 0.5 * (v + 1.0) * ad.log(1.0 + r * r / v))


def _mean_st_nll(x, v, sigma):
    """Mean of :func:`st_nll` over all elements, sharing the per-element-free terms."""
    r = x / sigma
    return (ad.lgamma(0.5 * v) - ad.lgamma(0.5 * (v + 1.0)) + 0.5 * ad.log(v * math.pi)
            + ad.log(sigma) + 0.5 * (v + 1.0) * ad.mean(ad.log(1.0 + r * r / v)))


def prediction_errors(outputs, Z, model: StateSpaceModel):
    """One-step-ahead errors ``z[k+1] - H F xhat[k|k]`` for ``k = 0..T-2``; ``(B, T-1, m)``."""
    HF = model.H @ model.F
    means = [ad.reshape(o.mean, np.shape(ad.value(o.mean))[:-1] + (1, model.n)) for o in outputs[:-1]]
    X = ad.concat(means, axis=-2)
    return np.asarray(Z)[:, 1:] - ad.matmul(X, HF.T)


def penalty_terms(params: RKFNetParams, cfg: TrainingConfig):
    R_hat = r_hat(params.R_s, params.varsigma[0])
    d = ad.det(R_hat) - 1.0
    sq = [ad.sum(W * W) for W in params.fcnn.weights] + [ad.sum(b * b) for b in params.fcnn.biases]
    sq += [ad.sum(params.R_s * params.R_s), params.v_prime * params.v_prime,
           params.sigma_prime * params.sigma_prime]
    total = sq[0]
    for s in sq[1:]:
        total = total + s
    return cfg.gamma1 * d * d, cfg.gamma2 * total


def loss_from_errors(E, params: RKFNetParams, cfg: TrainingConfig):
    if cfg.loss == "st":
        data = _mean_st_nll(E, params.v, params.sigma)
    elif cfg.loss == "l1":
        data = ad.mean(ad.abs(E))
    else:
        data = ad.mean(E * E)
    det_pen, l2_pen = penalty_terms(params, cfg)
    return data + det_pen + l2_pen


def loss(outputs, Z, params: RKFNetParams, cfg: TrainingConfig, model: StateSpaceModel):
    """Batch loss: mean data term over trajectories, time and components plus penalties."""
    L = loss_from_errors(prediction_errors(outputs, Z, model), params, cfg)
    if not np.all(np.isfinite(ad.value(L))):
        raise NonFiniteLoss(f"loss became {ad.value(L)}")
    return L


def loss_and_grads(params: RKFNetParams, Z, init: GaussianBelief, model: StateSpaceModel,
                   cfg: TrainingConfig, reference: GaussianBelief | None = None,
                   selector=None) -> tuple[float, dict]:
    """Batch loss value and its gradient for every named parameter array."""
    tape = ad.Tape()
    live, leaves = params.on_tape(tape)
    outs = rkfnet_forward(Z, init, live, model, reference, selector)
    L = loss(outs, Z, live, cfg, model)
    adj = tape.backward(L)
    return float(ad.value(L)), {name: adj[leaf] for name, leaf in leaves.items()}


def loss_value(params: RKFNetParams, Z, init, model, cfg, reference=None, selector=None) -> float:
    outs = rkfnet_forward(Z, init, params, model, reference, selector)
    return float(loss(outs, Z, params, cfg, model))


GRADCHECK_STEPS = {"fcnn": 1e-4, "R_s": 1e-7, "v_prime": 1e-7, "sigma_prime": 1e-7}


def _loss_and_pattern(params, Z, init, model, cfg, reference, selector):
    with activation_pattern() as pattern:
        L = loss_value(params, Z, init, model, cfg, reference, selector)
    return L, np.concatenate([a.ravel() for a in pattern])


def gradient_check(params: RKFNetParams, Z, init, model, cfg, reference=None, selector=None,
                   steps: dict | None = None, small: float = 1e-6, max_shrink: int = 4) -> dict:
    """Finite-difference discrepancies per parameter group.

    Returns ``group -> (max relative error where |g| >= small, max absolute
    error where |g| < small)``.  Groups are the FCNN (all weights and
    biases), ``R_s``, ``v_prime`` and ``sigma_prime``; the last three enter
    multiplied by ``varsigma`` and get smaller default steps.  A central
    difference is only valid if no leaky-ReLU changes side inside the
    stencil, so the step is cut tenfold (up to ``max_shrink`` times) until
    the activation pattern at both ends matches the unperturbed one.
    """
    steps = {**GRADCHECK_STEPS, **(steps or {})}
    _, grads = loss_and_grads(params, Z, init, model, cfg, reference, selector)
    _, pattern0 = _loss_and_pattern(params, Z, init, model, cfg, reference, selector)
    base = params.to_dict()
    worst: dict = {}
    for name, arr in base.items():
        group = "fcnn" if name.startswith("fcnn.") else name
        x = np.array(arr, dtype=float)
        flat = x.reshape(-1)
        fd = np.zeros(flat.size)
        for i in range(flat.size):
            old, h = flat[i], steps[group]
            for _ in range(max_shrink + 1):
                ends = []
                for sign in (1, -1):
                    flat[i] = old + sign * h
                    trial = RKFNetParams.from_dict({**base, name: x}, params.varsigma)
                    ends.append(_loss_and_pattern(trial, Z, init, model, cfg, reference, selector))
                flat[i] = old
                fd[i] = (ends[0][0] - ends[1][0]) / (2 * h)
                if all(np.array_equal(p, pattern0) for _, p in ends):
                    break
                h /= 10
        g = np.asarray(grads[name], dtype=float).reshape(-1)
        diff = np.abs(g - fd)
        big = np.abs(g) >= small
        rel = float((diff[big] / np.abs(g[big])).max()) if big.any() else 0.0
        absolute = float(diff[~big].max()) if (~big).any() else 0.0
        prev = worst.get(group, (0.0, 0.0))
        worst[group] = (max(prev[0], rel), max(prev[1], absolute))
    return worst


def uss_probability(t: int, cfg: TrainingConfig) -> float:
    return max(cfg.p_min, cfg.p_max - cfg.dp * t)


def draw_selector(shape, p_t: float, rng: np.random.Generator) -> np.ndarray:
    """Per-step coin tosses; True means "feed the reference belief"."""
    if not 0 <= p_t <= 1:
        raise ValueError("p_t must lie in [0, 1]")
    return rng.random(shape) < p_t


def run_rng(seed: int, run: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run,)))


def _observations(data) -> np.ndarray:
    if hasattr(data, "observations"):
        return np.asarray(data.observations, dtype=float)
    return np.asarray(data, dtype=float)


def cv_armse(params: RKFNetParams, model, init, cv_set) -> float:
    est = rkfnet_filter(params, model, _observations(cv_set), init)
    return armse(est, cv_set.states)


def train(model: StateSpaceModel, init: GaussianBelief, train_set, cv_set,
          reference: GaussianBelief, cfg: TrainingConfig, run: int = 0,
          params: RKFNetParams | None = None) -> tuple[RKFNetParams, TrainingHistory]:
    """Train one run.

    ``train_set`` and ``cv_set`` expose ``observations`` ``(N, T, m)``;
    ``cv_set`` also needs ``states`` for the cross-validation ARMSE.
    ``reference`` holds the reference filter's posteriors for every
    training trajectory, ``(N, T, n)`` means.
    """
    Z_all = _observations(train_set)
    N = len(Z_all)
    if cfg.batch_size > N:
        raise ValueError("batch_size exceeds the training-set size")
    rng = run_rng(cfg.seed, run)
    if params is None:
        params = init_params(model.m, rng)
    state = AdamState(cfg.base_rate, cfg.rate_halving_period)
    history = TrainingHistory()
    order = np.empty(0, dtype=int)
    for t in range(cfg.iterations):
        if t % cfg.cv_every == 0:
            history.cv.append((t, cv_armse(params, model, init, cv_set)))
        if len(order) < cfg.batch_size:
            order = np.concatenate([order, rng.permutation(N)])
        idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        Z = Z_all[idx]
        p_t = uss_probability(t, cfg)
        sel = draw_selector(Z.shape[:2], p_t, rng)
        ref = GaussianBelief(reference.mean[idx], reference.cov[idx])

        L, grads = loss_and_grads(params, Z, init, model, cfg, ref, sel)
        new, state = adam_step(state, params.to_dict(), grads)
        params = RKFNetParams.from_dict(new, params.varsigma)

        history.loss.append(L)
        history.p.append(p_t)
        history.rate.append(learning_rate(t, cfg.base_rate, cfg.rate_halving_period))
    history.cv.append((cfg.iterations, cv_armse(params, model, init, cv_set)))
    log.info("run %d: final loss %s, cv armse %.4f", run,
             history.loss[-1] if history.loss else None, history.final_cv)
    return params, history


def select_best_index(scores) -> int:
    """Index of the smallest finite score; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=float)
    ok = np.isfinite(scores)
    if not ok.any():
        raise AllRunsFailed("no run finished with a finite score")
    return int(np.argmin(np.where(ok, scores, np.inf)))


def select_best(runs: list, cv_set, model: StateSpaceModel, init: GaussianBelief):
    """Pick the run with the lowest CV position ARMSE; failed runs are ``None``."""
    scores = [np.inf if r is None else cv_armse(r[0], model, init, cv_set) for r in runs]
    best = select_best_index(scores)
    params, history = runs[best]
    history.selected_run = best
    return params, best


def train_runs(model, init, train_set, cv_set, reference, cfg: TrainingConfig):
    """Independent restarts differing only by seed; returns ``(params, runs, best)``."""
    runs = []
    for run in range(cfg.runs):
        try:
            runs.append(train(model, init, train_set, cv_set, reference, cfg, run))
        except (NonFiniteLoss, np.linalg.LinAlgError) as exc:
            log.warning("run %d diverged: %s", run, exc)
            runs.append(None)
    params, best = select_best(runs, cv_set, model, init)
    return params, runs, best
