"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

The model family here only ever builds one fixed, shallow computation graph per
optimizer step (linear projections, gathers, dot-product scores, a tiny gated
MLP, and a handful of reductions), so the op set is deliberately small. All
arithmetic is float64; graphs are built fresh every step and discarded after
``backward``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

SIGMOID_EPS = 1e-7
LOGIT_CLAMP = 50.0


class Tensor:
    """Node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        name: str | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None


def constant(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), backward=backward)
    return Tensor(data, requires_grad=False)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _accumulate(a, g * c)

    return _node(a.data * c, (a,), bw)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D @ 2-D matrix product."""

    def bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bw)


def vecmat(v: Tensor, w: Tensor) -> Tensor:
    """1-D vector times 2-D matrix: (d,) @ (d, h) -> (h,)."""

    def bw(g):
        _accumulate(v, w.data @ g)
        _accumulate(w, np.outer(v.data, g))

    return _node(v.data @ w.data, (v, w), bw)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)

    return _node(a.data[idx], (a,), bw)


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row dot product of two (n, d) matrices -> (n,)."""

    def bw(g):
        _accumulate(a, g[:, None] * b.data)
        _accumulate(b, g[:, None] * a.data)

    return _node(np.einsum("ij,ij->i", a.data, b.data), (a, b), bw)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    widths = [t.data.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accumulate(t, g[:, lo:hi])

    return _node(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), bw)


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)

    def bw(g):
        _accumulate(a, g * y * (1.0 - y))

    return _node(y, (a,), bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        _accumulate(a, g * mask)

    return _node(np.clip(a.data, lo, hi), (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, g / a.data)

    return _node(np.log(a.data), (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        _accumulate(a, g * mask)

    return _node(a.data * mask, (a,), bw)


def tsum(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _node(a.data.sum(), (a,), bw)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        _accumulate(a, np.broadcast_to(g / n, a.data.shape))

    return _node(a.data.mean(), (a,), bw)


def column_mean(a: Tensor) -> Tensor:
    """Mean over rows of an (n, d) matrix -> (d,)."""
    n = a.data.shape[0]

    def bw(g):
        _accumulate(a, np.broadcast_to(g / n, a.data.shape))

    return _node(a.data.mean(axis=0), (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax of a 1-D logit vector."""
    z = a.data - a.data.max()
    e = np.exp(z)
    s = e / e.sum()

    def bw(g):
        _accumulate(a, s * (g - np.dot(g, s)))

    return _node(s, (a,), bw)


def stack_scalars(tensors: Sequence[Tensor]) -> Tensor:
    """Stack k single-element tensors into a (k,) vector."""

    def bw(g):
        for i, t in enumerate(tensors):
            _accumulate(t, g[i].reshape(t.data.shape))

    return _node(np.array([t.data.reshape(()) for t in tensors]), tuple(tensors), bw)


def weighted_sum(mats: Sequence[Tensor], w: Tensor) -> Tensor:
    """sum_r w[r] * mats[r] for a (k,) weight vector and k same-shape matrices."""
    if len(mats) != w.data.shape[0]:
        raise ValueError(f"{len(mats)} matrices but {w.data.shape[0]} weights")
    out = np.zeros_like(mats[0].data)
    for wr, m in zip(w.data, mats):
        out += wr * m.data

    def bw(g):
        for r, m in enumerate(mats):
            _accumulate(m, w.data[r] * g)
        if w.requires_grad:
            gw = np.array([np.sum(g * m.data) for m in mats])
            _accumulate(w, gw)

    return _node(out, tuple(mats) + (w,), bw)


def group_mean_rows(a: Tensor, flat_idx: np.ndarray, offsets: np.ndarray) -> Tensor:
    """Mean of row groups: group g covers a[flat_idx[offsets[g]:offsets[g+1]]].

    Every group must be non-empty.
    """
    flat_idx = np.asarray(flat_idx, dtype=np.intp)
    counts = np.diff(offsets).astype(np.float64)
    gathered = a.data[flat_idx]
    sums = np.add.reduceat(gathered, offsets[:-1], axis=0)
    out = sums / counts[:, None]

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            per_row = np.repeat(g / counts[:, None], np.diff(offsets), axis=0)
            np.add.at(a.grad, flat_idx, per_row)

    return _node(out, (a,), bw)


def clipped_sigmoid(a: Tensor) -> Tensor:
    """Sigmoid with outputs clamped to [eps, 1-eps] so downstream logs stay finite."""
    return clip(sigmoid(a), SIGMOID_EPS, 1.0 - SIGMOID_EPS)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; accumulates into leaf ``.grad``."""
    if loss.data.ndim != 0:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.grad = np.asarray(1.0)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Inputs-first topological order of the grad-requiring subgraph."""
    order: list[Tensor] = []
    visited = {id(root)}
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, i = stack[-1]
        parents = node._parents
        advanced = False
        while i < len(parents):
            p = parents[i]
            i += 1
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack[-1] = (node, i)
                stack.append((p, 0))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order
