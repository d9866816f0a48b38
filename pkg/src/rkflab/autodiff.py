"""Reverse-mode automatic differentiation on a tape of numpy-valued nodes.

Every operation appends one node holding its forward value, the indices of
its parent nodes and one vector-Jacobian closure per parent.  Parents always
precede children on the tape, so a single sweep in decreasing index order
accumulates all adjoints.

Operands that are not :class:`Node` objects are treated as constants.  When
no operand is a node the functions simply return numpy results, which lets
the same model code run untaped at inference time.
"""

from __future__ import annotations

import math

import numpy as np


class DomainError(ValueError):
    pass


EXP_CLAMP = 30.0


class Node:
    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None  # make numpy defer to the reflected Node operators

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.value.shape})"


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.ops: list[str] = []
        self.parents: list[tuple] = []
        self.vjps: list[tuple] = []
        self.visits = np.zeros(0, dtype=int)

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> Node:
        return self._push(np.array(value, dtype=float), "leaf", (), ())

    def _push(self, value, op, parents, vjps) -> Node:
        node = Node(self, len(self.nodes), value)
        self.nodes.append(node)
        self.ops.append(op)
        self.parents.append(tuple(parents))
        self.vjps.append(tuple(vjps))
        return node

    def backward(self, loss: Node) -> "Adjoints":
        if loss.tape is not self:
            raise ValueError("loss node belongs to another tape")
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        grads: list = [None] * (loss.index + 1)
        grads[loss.index] = np.ones_like(loss.value)
        self.visits = np.zeros(len(self.nodes), dtype=int)
        for i in range(loss.index, -1, -1):
            self.visits[i] += 1
            g = grads[i]
            if g is None:
                continue
            for p, fn in zip(self.parents[i], self.vjps[i]):
                contrib = fn(g)
                grads[p] = contrib if grads[p] is None else grads[p] + contrib
        return Adjoints(grads)


class Adjoints:
    """Gradient lookup by node; unreachable nodes get zeros."""

    def __init__(self, grads: list):
        self._grads = grads

    def __getitem__(self, node: Node) -> np.ndarray:
        g = self._grads[node.index] if node.index < len(self._grads) else None
        return np.zeros_like(node.value) if g is None else g


def backward(tape: Tape, loss: Node) -> Adjoints:
    return tape.backward(loss)


def value(x):
    return x.value if isinstance(x, Node) else x


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _apply(op: str, out: np.ndarray, operands: tuple, vjps: tuple):
    """Record ``out`` with a vjp for each operand that is a node."""
    tape = None
    for x in operands:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands belong to different tapes")
    if tape is None:
        return out
    parents, fns = [], []
    for x, fn in zip(operands, vjps):
        if isinstance(x, Node):
            shape = x.value.shape
            parents.append(x.index)
            fns.append(lambda g, fn=fn, shape=shape: _unbroadcast(fn(g), shape))
    return tape._push(out, op, parents, fns)


def add(a, b):
    return _apply("add", value(a) + value(b), (a, b), (lambda g: g, lambda g: g))


def sub(a, b):
    return _apply("sub", value(a) - value(b), (a, b), (lambda g: g, lambda g: -g))


def mul(a, b):
    av, bv = value(a), value(b)
    return _apply("mul", av * bv, (a, b), (lambda g: g * bv, lambda g: g * av))


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _apply("div", out, (a, b), (lambda g: g / bv, lambda g: -g * out / bv))


def neg(a):
    return _apply("neg", -value(a), (a,), (lambda g: -g,))


def _check_positive(x, name):
    if np.any(~(x > 0)):
        raise DomainError(f"{name} of a non-positive argument")


def log(a):
    av = np.asarray(value(a), dtype=float)
    _check_positive(av, "log")
    return _apply("log", np.log(av), (a,), (lambda g: g / av,))


def exp(a):
    """Exponential with the argument clamped to ``[-30, 30]``; zero gradient outside."""
    av = np.asarray(value(a), dtype=float)
    inside = np.abs(av) <= EXP_CLAMP
    out = np.exp(np.clip(av, -EXP_CLAMP, EXP_CLAMP))
    return _apply("exp", out, (a,), (lambda g: g * out * inside,))


def sqrt(a):
    av = np.asarray(value(a), dtype=float)
    _check_positive(av, "sqrt")
    out = np.sqrt(av)
    return _apply("sqrt", out, (a,), (lambda g: g * 0.5 / out,))


def abs(a):  # noqa: A001
    av = value(a)
    return _apply("abs", np.abs(av), (a,), (lambda g: g * np.sign(av),))


def shrink(a):
    """``sign(x) * log(1 + |x|)``: odd, monotone, logarithmic growth."""
    av = np.asarray(value(a), dtype=float)
    out = np.sign(av) * np.log1p(np.abs(av))
    return _apply("shrink", out, (a,), (lambda g: g / (1.0 + np.abs(av)),))


def leaky_relu(a, slope: float = 0.1):
    av = np.asarray(value(a), dtype=float)
    d = np.where(av > 0, 1.0, slope)
    return _apply("leaky_relu", av * d, (a,), (lambda g: g * d,))


_LANCZOS_G = 7.0
_LANCZOS = np.array([
    0.99999999999980993, 676.5203681218851, -1259.1392167224028,
    771.32342877765313, -176.61502916214059, 12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7,
])


def _lanczos(x: np.ndarray):
    """``lgamma`` and its derivative for ``x >= 0.5``."""
    z = x - 1.0
    i = np.arange(1, 9)
    denom = z[..., None] + i
    A = _LANCZOS[0] + (_LANCZOS[1:] / denom).sum(-1)
    dA = -(_LANCZOS[1:] / denom**2).sum(-1)
    t = z + _LANCZOS_G + 0.5
    lg = 0.5 * math.log(2 * math.pi) + (z + 0.5) * np.log(t) - t + np.log(A)
    psi = np.log(t) + (z + 0.5) / t - 1.0 + dA / A
    return lg, psi


def lgamma_and_digamma(x):
    x = np.asarray(x, dtype=float)
    _check_positive(x, "lgamma")
    small = x < 0.5
    xr = np.where(small, 1.0 - x, x)
    lg, psi = _lanczos(xr)
    if np.any(small):
        s = np.sin(math.pi * x)
        lg = np.where(small, math.log(math.pi) - np.log(np.abs(s)) - lg, lg)
        psi = np.where(small, psi - math.pi * np.cos(math.pi * x) / s, psi)
    return lg, psi


def lgamma(a):
    lg, psi = lgamma_and_digamma(value(a))
    return _apply("lgamma", lg, (a,), (lambda g: g * psi,))


def matmul(a, b):
    av, bv = value(a), value(b)
    if np.ndim(av) < 2 or np.ndim(bv) < 2:
        raise ValueError("matmul operands need at least two dimensions")
    return _apply("matmul", av @ bv, (a, b), (
        lambda g: g @ np.swapaxes(bv, -1, -2),
        lambda g: np.swapaxes(av, -1, -2) @ g,
    ))


def matvec(A, x):
    """``A @ x`` over the last axis of ``x``."""
    xs = value(x).shape
    y = matmul(A, reshape(x, xs + (1,)))
    return reshape(y, value(y).shape[:-1])


def transpose(a):
    return _apply("transpose", np.swapaxes(value(a), -1, -2), (a,),
                  (lambda g: np.swapaxes(g, -1, -2),))


def reshape(a, shape):
    av = value(a)
    return _apply("reshape", np.reshape(av, shape), (a,), (lambda g: g.reshape(av.shape),))


def getitem(a, idx):
    av = value(a)

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (int, slice, type(Ellipsis), type(None))) for p in parts)

    def vjp(g):
        out = np.zeros_like(av)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return out

    return _apply("getitem", av[idx], (a,), (vjp,))


def concat(items, axis: int = -1):
    vals = [np.asarray(value(x), dtype=float) for x in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    vjps = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        def vjp(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]
        vjps.append(vjp)
    return _apply("concat", out, tuple(items), tuple(vjps))


def sum(a, axis=None):  # noqa: A001
    av = value(a)
    out = np.sum(av, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _apply("sum", out, (a,), (vjp,))


def mean(a, axis=None):
    av = value(a)
    count = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis) / float(count)


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    return _apply("where", np.where(cond, value(a), value(b)), (a, b), (
        lambda g: np.where(cond, g, 0.0),
        lambda g: np.where(cond, 0.0, g),
    ))


def solve(A, B):
    """``A^-1 B`` for batches of square ``A``."""
    Av, Bv = value(A), value(B)
    X = np.linalg.solve(Av, Bv)

    def vjp_B(g):
        return np.linalg.solve(np.swapaxes(Av, -1, -2), g)

    def vjp_A(g):
        return -vjp_B(g) @ np.swapaxes(X, -1, -2)

    return _apply("solve", X, (A, B), (vjp_A, vjp_B))


def det(A):
    Av = value(A)
    d = np.linalg.det(Av)

    def vjp(g):
        return (g * d)[..., None, None] * np.swapaxes(np.linalg.inv(Av), -1, -2)

    return _apply("det", d, (A,), (vjp,))


def numerical_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad
