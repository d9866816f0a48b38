"""Fully connected network, Adam optimiser and the binary checkpoint format."""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

HIDDEN = (32, 64, 32)
LEAKY_SLOPE = 0.1


@dataclass
class FcnnParams:
    weights: list  # (fan_in, fan_out) each
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("one bias per weight matrix")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            W, b = ad.value(W), ad.value(b)
            if np.shape(W)[1] != np.shape(b)[0]:
                raise ValueError(f"layer {i}: weight {np.shape(W)} vs bias {np.shape(b)}")
            if i and np.shape(ad.value(self.weights[i - 1]))[1] != np.shape(W)[0]:
                raise ValueError(f"layer {i}: input size does not chain")

    @property
    def sizes(self) -> tuple:
        shapes = [np.shape(ad.value(W)) for W in self.weights]
        return (shapes[0][0],) + tuple(s[1] for s in shapes)


def init_fcnn(n_in: int, rng: np.random.Generator, hidden=HIDDEN, n_out: int = 1) -> FcnnParams:
    """Glorot-uniform weights, zero biases."""
    sizes = (n_in,) + tuple(hidden) + (n_out,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return FcnnParams(weights, biases)


_pattern: list | None = None


@contextmanager
def activation_pattern():
    """Collect the sign of every hidden pre-activation computed inside the block.

    Finite-difference checks use it to tell when a perturbation crosses a
    leaky-ReLU kink.
    """
    global _pattern
    outer, _pattern = _pattern, []
    try:
        yield _pattern
    finally:
        _pattern = outer


def fcnn_forward(params: FcnnParams, x):
    """Leaky-ReLU hidden layers, linear scalar output; ``x`` is ``(..., n_in)``."""
    n_in = params.sizes[0]
    if np.shape(ad.value(x))[-1] != n_in:
        raise ValueError(f"expected {n_in} input features, got {np.shape(ad.value(x))[-1]}")
    h = x
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.matmul(h, W) + b if np.ndim(ad.value(h)) >= 2 else ad.matvec(ad.transpose(W), h) + b
        if i < last:
            if _pattern is not None:
                _pattern.append(np.asarray(ad.value(h)) > 0)
            h = ad.leaky_relu(h, LEAKY_SLOPE)
    return h[..., 0]


def learning_rate(t: int, base: float = 2e-4, period: int = 400) -> float:
    """Step schedule: ``base`` halved every ``period`` iterations."""
    return base * 0.5 ** (t // period)


@dataclass
class AdamState:
    base_rate: float = 2e-4
    period: int = 400
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; returns new parameter dict and state."""
    lr = learning_rate(state.t, state.base_rate, state.period)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(p):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(p)} for {name}")
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(state.base_rate, state.period, b1, b2, state.eps, t, new_m, new_v)


MAGIC = b"RKFN"
FORMAT_VERSION = 1


def save_arrays(path, arrays: dict) -> None:
    """Write named float64 arrays: magic, u32 version, u32 count, then per array
    u32 name length, utf-8 name, u32 ndim, u64 dims, little-endian data."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_arrays(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError("not an RKFN checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    return out
