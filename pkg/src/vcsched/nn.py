"""Minimal dense-tensor autodiff: forward primitives, a recorded tape for
reverse-mode gradients, and SGD/Adam updates.

Everything is float64. Graphs are dynamic (rebuilt every forward pass), which
is what the per-instance attention networks need.
"""
from __future__ import annotations

import json
import numpy as np

__all__ = [
    "Tensor", "constant", "parameter", "matmul", "add", "sub", "mul",
    "concat", "elu", "softmax", "take", "take_pairs", "attend", "reshape",
    "mean", "total", "square", "mse", "Sgd", "Adam",
    "save_checkpoint", "load_checkpoint", "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite value produced by tensor op")
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order, seen = [], set()

        def visit(node):
            if id(node) in seen or not node.requires_grad:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        if not order:
            return
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _accum(node: Tensor, g: np.ndarray):
    if node.requires_grad:
        node.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))
    return Tensor(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))
    return Tensor(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))
    return Tensor(a.data * b.data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)
    return Tensor(a.data @ b.data, (a, b), bw)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])
    return Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw)


def elu(a: Tensor) -> Tensor:
    out = np.where(a.data >= 0, a.data, np.expm1(a.data))

    def bw(g):
        _accum(a, g * np.where(a.data >= 0, 1.0, out + 1.0))
    return Tensor(out, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(a, (g - (g * s).sum(axis=axis, keepdims=True)) * s)
    return Tensor(s, (a,), bw)


def take(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of `a` along axis 0; idx may have any shape."""
    idx = np.asarray(idx, dtype=np.intp)

    def bw(g):
        if a.requires_grad:
            np.add.at(a.grad, idx, g)
    return Tensor(a.data[idx], (a,), bw)


def take_pairs(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def bw(g):
        if a.requires_grad:
            np.add.at(a.grad, (rows, cols), g)
    return Tensor(a.data[rows, cols], (a,), bw)


def attend(alpha: Tensor, values: Tensor, idx: np.ndarray) -> Tensor:
    """out[r] = sum_s alpha[r, s] * values[idx[r, s]].

    Fused gather + weighted sum so an attention layer adds a single tape node.
    """
    idx = np.asarray(idx, dtype=np.intp)
    gathered = values.data[idx]  # (R, S, d)
    out = np.einsum("rs,rsd->rd", alpha.data, gathered)

    def bw(g):
        _accum(alpha, np.einsum("rd,rsd->rs", g, gathered))
        if values.requires_grad:
            np.add.at(values.grad, idx, alpha.data[..., None] * g[:, None, :])
    return Tensor(out, (alpha, values), bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        _accum(a, g.reshape(a.data.shape))
    return Tensor(a.data.reshape(shape), (a,), bw)


def total(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, np.full_like(a.data, float(g)))
    return Tensor(a.data.sum(), (a,), bw)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        _accum(a, np.full_like(a.data, float(g) / n))
    return Tensor(a.data.mean(), (a,), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g * 2.0 * a.data)
    return Tensor(a.data ** 2, (a,), bw)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    return mean(square(sub(pred, target)))


class Sgd:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self):
        for p in self.params.values():
            if p.grad is not None:
                p.data -= self.lr * p.grad

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            if p.grad is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * p.grad
            self.v[k] = b2 * self.v[k] + (1 - b2) * p.grad ** 2
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def save_checkpoint(path, named_params: dict[str, dict[str, Tensor]]):
    """Write namespaced parameter groups to a JSON checkpoint."""
    doc = {"version": CHECKPOINT_VERSION, "groups": {}}
    for group, params in named_params.items():
        doc["groups"][group] = {
            name: {"shape": list(p.data.shape), "values": p.data.ravel().tolist()}
            for name, p in params.items()
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> dict[str, dict[str, Tensor]]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {doc.get('version')!r}")
    out = {}
    for group, params in doc["groups"].items():
        out[group] = {
            name: parameter(np.asarray(t["values"]).reshape(t["shape"]))
            for name, t in params.items()
        }
    return out
