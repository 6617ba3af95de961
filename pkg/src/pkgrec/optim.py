"""Adam with decoupled weight decay, plus a central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward


@dataclass
class OptState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def slot(self, name: str, like: np.ndarray):
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)
        return self.m[name], self.v[name]


def adam_step(
    named: dict,
    state: OptState,
    lr: float,
    l2: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    free=None,
):
    """One update over ``named`` (name -> Tensor), in dict order.

    Weight decay is decoupled: parameters shrink by (1 - lr*l2) before the
    adaptive step, so the decay never flows through the moment estimates.
    Tensors outside ``free`` (when given) or without a gradient are left
    bit-identical and their optimizer slots untouched.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, tensor in named.items():
        if free is not None and name not in free:
            continue
        if tensor.grad is None:
            continue
        g = tensor.grad
        m, v = state.slot(name, tensor.data)
        if l2:
            tensor.data *= 1.0 - lr * l2
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        tensor.data -= lr * update


@dataclass
class TensorCheck:
    name: str
    max_rel_err: float
    worst_coord: tuple
    analytic: float
    numeric: float
    coords_checked: int


@dataclass
class GradCheckReport:
    per_tensor: list
    max_rel_err: float

    def worst(self) -> TensorCheck:
        return max(self.per_tensor, key=lambda c: c.max_rel_err)


def grad_check(
    loss_fn,
    named: dict,
    h: float = 1e-5,
    max_coords: int = 100,
    seed: int = 0,
    atol: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() gradients against central finite differences.

    ``loss_fn`` must rebuild the forward graph from the tensors' current
    ``data`` on every call. Checks up to ``max_coords`` coordinates per tensor
    (all of them for small tensors); relative error is
    |a - n| / max(1e-8, |a| + |n|).

    Coordinates where both sides are below ``atol`` count as exact: a
    parameter the loss provably ignores (e.g. a bias that a downstream
    softmax cancels) has analytic gradient ~0 while the central difference
    is pure cancellation noise of order eps*|loss|/h, and their ratio is
    meaningless.
    """
    for tensor in named.values():
        tensor.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in named.items()
    }

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x67636B]))
    checks = []
    for name, tensor in named.items():
        flat = tensor.data.reshape(-1)
        size = flat.shape[0]
        if size <= max_coords:
            coords = np.arange(size)
        else:
            coords = np.sort(rng.choice(size, size=max_coords, replace=False))
        worst = TensorCheck(name, 0.0, (), 0.0, 0.0, len(coords))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = float(loss_fn().data)
            flat[c] = orig - h
            f_minus = float(loss_fn().data)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[c])
            if abs(a) < atol and abs(numeric) < atol:
                rel = 0.0
            else:
                rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel >= worst.max_rel_err:
                idx = np.unravel_index(c, tensor.data.shape)
                worst = TensorCheck(name, rel, tuple(int(i) for i in idx), a, numeric, len(coords))
        checks.append(worst)
    return GradCheckReport(per_tensor=checks, max_rel_err=max(c.max_rel_err for c in checks))
