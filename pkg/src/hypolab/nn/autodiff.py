"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray and records the backward closure of the
op that made it.  ``backward()`` on a scalar walks the tape in reverse
topological order, accumulating ``.grad`` arrays on every tensor that
requires gradients.  Ops preserve the dtype of their inputs, so the same
graph code runs in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "parameter",
    "add",
    "mul",
    "matmul",
    "linear",
    "embedding",
    "layer_norm",
    "softmax",
    "cross_entropy",
    "linear_recurrence",
    "custom_op",
    "relu",
    "gelu",
    "sigmoid",
    "tanh",
    "silu",
    "softplus",
    "exp",
    "reshape",
    "swapaxes",
    "reduce_sum",
]

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the context (forward-only evaluation)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Tensor], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() starts from a scalar")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node)

    # Operator sugar; the module-level functions are the implementation.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    # never accumulate in place: .grad may alias another tensor's grad buffer
    t.grad = g if t.grad is None else t.grad + g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[Tensor], None]) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def custom_op(
    data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[Tensor], None]
) -> Tensor:
    """Register an externally computed primitive with its backward closure.

    ``backward`` receives the output tensor and must call
    :func:`accumulate_grad` on each parent.
    """
    return _make(data, parents, backward)


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    _accumulate(t, g)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        data = a.data + b.data

        def backward(out: Tensor) -> None:
            _accumulate(a, _unbroadcast(out.grad, a.shape))
            _accumulate(b, _unbroadcast(out.grad, b.shape))

        return _make(data, (a, b), backward)

    const = np.asarray(b, dtype=a.dtype) if isinstance(b, np.ndarray) else b
    data = a.data + const

    def backward(out: Tensor) -> None:
        _accumulate(a, _unbroadcast(out.grad, a.shape))

    return _make(data, (a,), backward)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        data = a.data * b.data

        def backward(out: Tensor) -> None:
            _accumulate(a, _unbroadcast(out.grad * b.data, a.shape))
            _accumulate(b, _unbroadcast(out.grad * a.data, b.shape))

        return _make(data, (a, b), backward)

    const = b
    data = a.data * const

    def backward(out: Tensor) -> None:
        _accumulate(a, _unbroadcast(out.grad * const, a.shape))

    return _make(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def backward(out: Tensor) -> None:
        g = out.grad
        _accumulate(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        _accumulate(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _make(data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b) over the last axis, with the matmul flattened to 2-D."""
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out2 = x2 @ w.data
    if b is not None:
        out2 = out2 + b.data
    data = out2.reshape(*lead, w.shape[-1])
    parents = (x, w) if b is None else (x, w, b)

    def backward(out: Tensor) -> None:
        g2 = out.grad.reshape(-1, w.shape[-1])
        _accumulate(x, (g2 @ w.data.T).reshape(x.shape))
        _accumulate(w, x2.T @ g2)
        if b is not None:
            _accumulate(b, g2.sum(axis=0))

    return _make(data, parents, backward)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ValueError("embedding index out of range")
    data = table.data[idx]

    def backward(out: Tensor) -> None:
        _accumulate(table, kernels.embedding_grad(idx, out.grad, table.shape[0]))

    return _make(data, (table,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    data = xhat * gamma.data + beta.data

    def backward(out: Tensor) -> None:
        g = out.grad
        lead = tuple(range(g.ndim - 1))
        _accumulate(gamma, (g * xhat).sum(axis=lead))
        _accumulate(beta, g.sum(axis=lead))
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, rstd * (dxhat - m1 - xhat * m2))

    return _make(data, (x, gamma, beta), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(out: Tensor) -> None:
        g = out.grad
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), backward)


def _pointwise(x: Tensor, value: np.ndarray, dlocal: np.ndarray) -> Tensor:
    def backward(out: Tensor) -> None:
        _accumulate(x, out.grad * dlocal)

    return _make(value, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _pointwise(x, np.where(mask, x.data, 0.0), mask.astype(x.dtype))


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _pointwise(x, s, s * (1.0 - s))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _pointwise(x, t, 1.0 - t * t)


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _pointwise(x, x.data * s, s * (1.0 + x.data * (1.0 - s)))


def softplus(x: Tensor) -> Tensor:
    value = np.logaddexp(0.0, x.data).astype(x.dtype, copy=False)
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _pointwise(x, value, s)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _pointwise(x, e, e)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    x3 = x.data * x.data * x.data
    inner = _GELU_C * (x.data + 0.044715 * x3)
    t = np.tanh(inner)
    value = 0.5 * x.data * (1.0 + t)
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x.data * x.data)
    dlocal = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * dinner
    return _pointwise(x, value, dlocal)


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def backward(out: Tensor) -> None:
        _accumulate(x, out.grad.reshape(x.shape))

    return _make(data, (x,), backward)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    data = x.data.swapaxes(a, b)

    def backward(out: Tensor) -> None:
        _accumulate(x, out.grad.swapaxes(a, b))

    return _make(data, (x,), backward)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(out: Tensor) -> None:
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return _make(data, (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``targets`` at masked positions.

    ``logits`` is (..., V); ``targets`` and ``mask`` broadcast over the
    leading axes.  The mean is over active positions, so the value is
    independent of sequence length and batch size.
    """
    targets = np.asarray(targets)
    mask = np.broadcast_to(np.asarray(mask), targets.shape)
    count = float(mask.sum())
    if count == 0:
        raise ValueError("cross_entropy mask selects no positions")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    value = -(picked * mask).sum() / count
    data = np.asarray(value, dtype=logits.dtype)

    def backward(out: Tensor) -> None:
        g = float(out.grad)
        p = np.exp(logp)
        np.subtract(
            p,
            np.eye(logits.shape[-1], dtype=p.dtype)[targets],
            out=p,
        )
        p *= (mask * (g / count))[..., None]
        _accumulate(logits, p)

    return _make(data, (logits,), backward)


def linear_recurrence(a: Tensor, b: Tensor) -> Tensor:
    """First-order scan h_t = a_t * h_{t-1} + b_t over axis 0 of (T, B, C)."""
    h = kernels.linear_recurrence_fwd(a.data, b.data)

    def backward(out: Tensor) -> None:
        da, db = kernels.linear_recurrence_bwd(a.data, h, out.grad)
        _accumulate(a, da)
        _accumulate(b, db)

    return _make(h, (a, b), backward)
