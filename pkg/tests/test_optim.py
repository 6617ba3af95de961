import numpy as np
import pytest

from oracles import manual_adam
from pkgrec import autodiff as ad
from pkgrec.autodiff import backward, constant, parameter
from pkgrec.optim import OptState, adam_step, grad_check


def test_single_adam_step_closed_form():
    # constant gradient 1: first step moves by ~lr regardless of magnitude
    p = parameter(np.array([1.0]), name="p")
    p.grad = np.array([1.0])
    state = OptState()
    adam_step({"p": p}, state, lr=0.1)
    expect = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8)
    assert p.data[0] == pytest.approx(expect, abs=1e-15)
    assert state.step == 1


def test_adam_sequence_matches_reference():
    grads = [0.3, -1.2, 0.7, 0.05, -0.4]
    p = parameter(np.array([0.5]), name="p")
    state = OptState()
    for g in grads:
        p.grad = np.array([g])
        adam_step({"p": p}, state, lr=0.01, l2=0.1)
    expect = manual_adam(0.5, grads, lr=0.01, l2=0.1)
    assert p.data[0] == pytest.approx(expect, abs=1e-14)


def test_decay_is_decoupled_from_moments():
    # with zero gradient but nonzero decay the parameter shrinks geometrically
    p = parameter(np.array([2.0]), name="p")
    state = OptState()
    for _ in range(3):
        p.grad = np.array([0.0])
        adam_step({"p": p}, state, lr=0.1, l2=0.5)
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5) ** 3, abs=1e-14)


def test_frozen_tensors_stay_bit_identical():
    a = parameter(np.array([1.0, 2.0]), name="a")
    b = parameter(np.array([3.0]), name="b")
    a.grad = np.array([1.0, 1.0])
    b.grad = np.array([1.0])
    before = b.data.copy()
    state = OptState()
    adam_step({"a": a, "b": b}, state, lr=0.1, l2=0.3, free={"a"})
    assert b.data.tobytes() == before.tobytes()
    assert "b" not in state.m
    assert a.data[0] != 1.0


def test_no_grad_tensor_skipped():
    a = parameter(np.array([1.0]), name="a")
    state = OptState()
    adam_step({"a": a}, state, lr=0.1, l2=0.5)
    assert a.data[0] == 1.0
    assert state.step == 1


def make_quadratic(n=6, seed=0):
    rng = np.random.default_rng(seed)
    w = parameter(rng.normal(size=(n, 3)), name="w")
    c = constant(rng.normal(size=(n, 3)))

    def loss_fn():
        d = ad.sub(ad.sigmoid(w), c)
        return ad.tsum(ad.mul(d, d))

    return w, loss_fn


def test_grad_check_passes_on_correct_gradients():
    w, loss_fn = make_quadratic()
    report = grad_check(loss_fn, {"w": w})
    assert report.max_rel_err < 1e-6
    assert report.per_tensor[0].coords_checked == 18


def test_grad_check_detects_wrong_gradient():
    rng = np.random.default_rng(1)
    w = parameter(rng.normal(size=(4,)), name="w")

    def loss_fn():
        # forward is sum(w^2) but the backward is deliberately wrong (x3)
        def bw(g):
            w.grad = (w.grad if w.grad is not None else 0) + 3.0 * 2.0 * w.data * g

        from pkgrec.autodiff import Tensor

        return Tensor((w.data**2).sum(), requires_grad=True, parents=(w,), backward=bw)

    report = grad_check(loss_fn, {"w": w})
    assert report.max_rel_err > 0.1


def test_grad_check_subsamples_large_tensors_deterministically():
    rng = np.random.default_rng(2)
    w = parameter(rng.normal(size=(30, 20)), name="w")

    def loss_fn():
        return ad.tsum(ad.mul(w, w))

    r1 = grad_check(loss_fn, {"w": w}, max_coords=100, seed=5)
    r2 = grad_check(loss_fn, {"w": w}, max_coords=100, seed=5)
    assert r1.per_tensor[0].coords_checked == 100
    assert r1.per_tensor[0].worst_coord == r2.per_tensor[0].worst_coord
    assert r1.max_rel_err == r2.max_rel_err


def test_grad_check_covers_all_tensors():
    w, loss_fn = make_quadratic()
    b = parameter(np.zeros(3), name="b")

    def full():
        return ad.add(loss_fn(), ad.tsum(ad.mul(b, b)))

    report = grad_check(full, {"w": w, "b": b})
    assert {c.name for c in report.per_tensor} == {"w", "b"}
    assert report.worst().max_rel_err == report.max_rel_err
