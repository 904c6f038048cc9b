"""A small reverse-mode autodiff over dense float64 numpy arrays.

Only what the two networks need is here: dense layers, ReLU, sigmoid,
concatenation, row gathers, ordered set sums and the two losses.
"""

from __future__ import annotations

import contextlib
import json
import struct
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_RECORDING = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a tape (pure, thread-safe inference)."""
    global _RECORDING
    prev = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


def _result(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _RECORDING and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(cond: bool, msg: str):
    if not cond:
        raise ValueError(msg)


# --------------------------------------------------------------------------
# forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ok = a.data.ndim in (1, 2) and b.data.ndim in (1, 2) and a.shape[-1] == b.shape[0]
    _check(ok and not (a.data.ndim == 1 and b.data.ndim == 1), f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.outer(g, b.data) if b.data.ndim == 1 else g @ b.data.T)
        if b.requires_grad:
            b._accumulate(np.outer(a.data, g) if a.data.ndim == 1 else a.data.T @ g)

    return _result(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector over the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    bias = b.data.ndim == 1 and a.data.ndim == 2 and b.shape[0] == a.shape[1]
    _check(a.shape == b.shape or bias, f"add shape mismatch {a.shape} + {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0) if bias else g)

    return _result(a.data + b.data, (a, b), backward)


def scale(a: Tensor, k: float) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * k, (a,), lambda g: a._accumulate(g * k))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused ``x @ w.T + b`` for a batch of row vectors."""
    _check(x.data.ndim == 2 and x.shape[1] == w.shape[1], f"linear shape mismatch {x.shape} vs {w.shape}")
    out = x.data @ w.data.T + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data)
        if w.requires_grad:
            w._accumulate(g.T @ x.data)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _result(out, (x, w, b), backward)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _result(np.where(on, a.data, 0.0), (a,), lambda g: a._accumulate(g * on))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _result(s, (a,), lambda g: a._accumulate(g * s * (1.0 - s)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].data.ndim
    ax = axis % nd
    for t in ts:
        _check(t.data.ndim == nd, "concat rank mismatch")
        _check(all(t.shape[d] == ts[0].shape[d] for d in range(nd) if d != ax), "concat shape mismatch")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * nd
                sl[ax] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _result(np.concatenate([t.data for t in ts], axis=ax), ts, backward)


def gather(a: Tensor, index) -> Tensor:
    """Select rows ``a[index]`` (repeats allowed)."""
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, index, g)
        a._accumulate(acc)

    return _result(a.data[index], (a,), backward)


def sum_over_set(a: Tensor, members: np.ndarray) -> Tensor:
    """Per-receiver ordered sum of rows.

    ``members`` is an ``(R, K)`` integer array; row ``r`` lists the rows of
    ``a`` summed into output ``r``, in accumulation order, padded with -1.
    Accumulation runs strictly left to right so that a fixed member order
    gives bit-identical sums.
    """
    members = np.asarray(members, dtype=np.intp)
    r = members.shape[0]
    out = np.zeros((r,) + a.shape[1:])
    for k in range(members.shape[1]):
        col = members[:, k]
        valid = col >= 0
        out[valid] += a.data[col[valid]]

    def backward(g):
        acc = np.zeros_like(a.data)
        for k in range(members.shape[1]):
            col = members[:, k]
            valid = col >= 0
            np.add.at(acc, col[valid], g[valid])
        a._accumulate(acc)

    return _result(out, (a,), backward)


def total(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _result(np.asarray(a.data.sum()), (a,), lambda g: a._accumulate(np.broadcast_to(g, a.shape)))


def smooth_l1(pred: Tensor, target, beta: float = 1.0) -> Tensor:
    """Summed coordinate-wise Huber loss (quadratic below ``beta``)."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    _check(pred.shape == target.shape, f"smooth_l1 shape mismatch {pred.shape} vs {target.shape}")
    d = pred.data - target
    ad = np.abs(d)
    small = ad < beta
    loss = np.where(small, 0.5 * d * d / beta, ad - 0.5 * beta).sum()
    dl = np.where(small, d / beta, np.sign(d))
    return _result(np.asarray(loss), (pred,), lambda g: pred._accumulate(g * dl))


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy on raw scores."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64).reshape(logits.shape)
    x = logits.data
    loss = np.mean(np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x))))
    n = x.size

    def backward(g):
        logits._accumulate(g * (_sigmoid(x) - y) / n)

    return _result(np.asarray(loss), (logits,), backward)


def backward(loss: Tensor) -> None:
    """Fill ``.grad`` of every parameter that ``loss`` depends on."""
    if loss.data.size != 1:
        raise ValueError("backward needs a scalar loss")
    if not loss.requires_grad:
        raise ValueError("backward on a tensor with no recorded graph")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # interior nodes do not keep their gradients
            node.grad = None if node._parents else node.grad


# --------------------------------------------------------------------------
# layers and optimizers


class Dense:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.w = Tensor(rng.uniform(-limit, limit, size=(n_out, n_in)), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


class MLP:
    """Stack of dense layers with ReLU after each (optionally not the last)."""

    def __init__(self, n_in: int, sizes: Sequence[int], rng: np.random.Generator, final_relu: bool = True):
        self.sizes = list(sizes)
        self.layers = []
        prev = n_in
        for s in sizes:
            self.layers.append(Dense(prev, s, rng))
            prev = s
        self.final_relu = final_relu

    def __call__(self, x: Tensor) -> Tensor:
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1 or self.final_relu:
                x = relu(x)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


class SGD:
    """Momentum SGD: ``v = m * v + g; p -= lr * v``."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v
            p.grad = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad**2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def sgd_step(params: Sequence[Tensor], lr: float, momentum: float = 0.0, state: Optional[list] = None) -> list:
    """One functional momentum-SGD update; returns the velocity state."""
    if state is None:
        state = [np.zeros_like(p.data) for p in params]
    for p, v in zip(params, state):
        if p.grad is None:
            continue
        v *= momentum
        v += p.grad
        p.data -= lr * v
        p.grad = None
    return state


def make_optimizer(name: str, params, lr: float, momentum: float = 0.9):
    if name == "sgd":
        return SGD(params, lr=lr, momentum=momentum)
    if name == "adam":
        return Adam(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")


# --------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian float64


def save_checkpoint(path, params: dict[str, Tensor], header: Optional[dict] = None) -> None:
    head = dict(header or {})
    head["layers"] = [{"name": k, "shape": list(v.shape)} for k, v in params.items()]
    blob = b"".join(np.ascontiguousarray(v.data, dtype="<f8").tobytes() for v in params.values())
    text = json.dumps(head, sort_keys=True).encode()
    Path(path).write_bytes(struct.pack("<I", len(text)) + text + blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<I", raw[:4])
    head = json.loads(raw[4 : 4 + n].decode())
    off = 4 + n
    arrays = {}
    for layer in head["layers"]:
        count = int(np.prod(layer["shape"])) if layer["shape"] else 1
        arrays[layer["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(layer["shape"]).astype(np.float64)
        off += 8 * count
    if off != len(raw):
        raise ValueError("checkpoint size does not match its header")
    return head, arrays
