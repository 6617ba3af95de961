import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pkgrec import autodiff as ad
from pkgrec.autodiff import Tensor, backward, constant, parameter


def numeric_grad(loss_fn, arr, h=1e-6):
    """Central differences of a scalar-valued loss_fn() w.r.t. arr (mutated in place)."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(loss_fn().data)
        flat[i] = orig - h
        fm = float(loss_fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check_op(build, *arrays, h=1e-6, tol=1e-6):
    """build(*tensors) -> scalar loss; compares backward grads vs differences."""
    tensors = [parameter(a.copy()) for a in arrays]

    def run():
        return build(*tensors)

    loss = run()
    backward(loss)
    for t, a in zip(tensors, arrays):
        num = numeric_grad(lambda: build(*[Tensor(x.data, requires_grad=False) for x in tensors]), t.data, h=h)
        assert t.grad is not None
        np.testing.assert_allclose(t.grad, num, rtol=tol, atol=tol)


rng = np.random.default_rng(7)


def test_quadratic_loss_grad_equals_w():
    w = parameter(rng.normal(size=(4, 3)))
    loss = ad.scale(ad.tsum(ad.mul(w, w)), 0.5)
    backward(loss)
    np.testing.assert_allclose(w.grad, w.data, rtol=0, atol=0)


def test_constant_loss_has_zero_grad():
    w = parameter(rng.normal(size=(5,)))
    c = constant(rng.normal(size=(5,)))
    loss = ad.tsum(ad.mul(c, c))
    backward(loss)
    assert w.grad is None


def test_sigmoid_dot_gradient_frozen_value():
    # d/da sigmoid(a.b) at a = b = [1, 0] is sigma'(1) * b = [0.19661193324148185, 0]
    a = parameter(np.array([1.0, 0.0]))
    b = constant(np.array([1.0, 0.0]))
    s = ad.sigmoid(ad.tsum(ad.mul(a, b)))
    backward(s)
    np.testing.assert_allclose(a.grad, [0.19661193324148185, 0.0], atol=1e-12)


@pytest.mark.parametrize(
    "name,build,shapes",
    [
        ("add", lambda a, b: ad.tsum(ad.mul(ad.add(a, b), ad.add(a, b))), [(3, 4), (3, 4)]),
        ("add_broadcast", lambda a, b: ad.tsum(ad.mul(ad.add(a, b), ad.add(a, b))), [(3, 4), (4,)]),
        ("sub", lambda a, b: ad.tsum(ad.mul(ad.sub(a, b), ad.sub(a, b))), [(2, 5), (2, 5)]),
        ("mul", lambda a, b: ad.tsum(ad.mul(a, b)), [(4, 2), (4, 2)]),
        ("matmul", lambda a, b: ad.tsum(ad.matmul(a, b)), [(3, 4), (4, 2)]),
        ("vecmat", lambda v, w: ad.tsum(ad.vecmat(v, w)), [(4,), (4, 3)]),
        ("row_dot", lambda a, b: ad.tsum(ad.row_dot(a, b)), [(5, 3), (5, 3)]),
        ("sigmoid", lambda a: ad.tsum(ad.sigmoid(a)), [(6,)]),
        ("relu", lambda a: ad.tsum(ad.relu(a)), [(7,)]),
        ("tmean", lambda a: ad.tmean(ad.mul(a, a)), [(4, 3)]),
        ("column_mean", lambda a: ad.tsum(ad.mul(ad.column_mean(a), ad.column_mean(a))), [(5, 3)]),
        ("softmax", lambda a: ad.tsum(ad.mul(ad.softmax(a), ad.softmax(a))), [(5,)]),
        ("scale", lambda a: ad.scale(ad.tsum(a), 2.5), [(4,)]),
    ],
)
def test_op_gradients(name, build, shapes):
    arrays = [rng.normal(size=s) for s in shapes]
    check_op(build, *arrays)


def test_log_gradient():
    a = rng.uniform(0.5, 2.0, size=6)
    check_op(lambda t: ad.tsum(ad.log(t)), a)


def test_gather_rows_gradient_with_repeats():
    a = parameter(rng.normal(size=(5, 3)))
    idx = np.array([0, 2, 2, 4])
    loss = ad.tsum(ad.mul(ad.gather_rows(a, idx), ad.gather_rows(a, idx)))
    backward(loss)
    num = numeric_grad(
        lambda: ad.tsum(ad.mul(ad.gather_rows(a, idx), ad.gather_rows(a, idx))), a.data
    )
    np.testing.assert_allclose(a.grad, num, rtol=1e-6, atol=1e-7)


def test_concat_cols_gradient():
    a = rng.normal(size=(4, 2))
    b = rng.normal(size=(4, 3))
    check_op(lambda x, y: ad.tsum(ad.mul(ad.concat_cols([x, y]), ad.concat_cols([x, y]))), a, b)


def test_stack_scalars_and_softmax():
    xs = [rng.normal(size=(1,)) for _ in range(3)]
    check_op(
        lambda *ts: ad.tsum(ad.mul(ad.softmax(ad.stack_scalars(list(ts))), ad.stack_scalars(list(ts)))),
        *xs,
    )


def test_weighted_sum_gradient():
    mats = [rng.normal(size=(3, 2)) for _ in range(3)]
    w = rng.normal(size=3)

    def build(m0, m1, m2, wt):
        s = ad.weighted_sum([m0, m1, m2], wt)
        return ad.tsum(ad.mul(s, s))

    check_op(build, *mats, w)


def test_group_mean_rows_matches_manual():
    a = parameter(rng.normal(size=(6, 2)))
    flat = np.array([0, 1, 2, 3, 4, 5])
    offsets = np.array([0, 2, 6])
    out = ad.group_mean_rows(a, flat, offsets)
    np.testing.assert_allclose(out.data[0], a.data[:2].mean(axis=0))
    np.testing.assert_allclose(out.data[1], a.data[2:].mean(axis=0))
    loss = ad.tsum(ad.mul(out, out))
    backward(loss)
    num = numeric_grad(
        lambda: ad.tsum(
            ad.mul(ad.group_mean_rows(a, flat, offsets), ad.group_mean_rows(a, flat, offsets))
        ),
        a.data,
    )
    np.testing.assert_allclose(a.grad, num, rtol=1e-6, atol=1e-7)


def test_clip_blocks_gradient_outside_range():
    a = parameter(np.array([-2.0, 0.0, 2.0]))
    loss = ad.tsum(ad.clip(a, -1.0, 1.0))
    backward(loss)
    np.testing.assert_allclose(a.grad, [0.0, 1.0, 0.0])


def test_clipped_sigmoid_is_finite_at_extremes():
    a = constant(np.array([-1e4, 0.0, 1e4]))
    s = ad.clipped_sigmoid(a)
    logs = np.log(s.data)
    assert np.isfinite(logs).all()
    assert np.isfinite(np.log(1.0 - s.data)).all()


def test_backward_requires_scalar():
    a = parameter(rng.normal(size=(3,)))
    with pytest.raises(ValueError):
        backward(ad.mul(a, a))


def test_gradients_accumulate_across_shared_subgraph():
    # y = x used twice: d/dx (x.x + sum(x)) = 2x + 1
    x = parameter(np.array([1.0, -2.0, 3.0]))
    loss = ad.add(ad.tsum(ad.mul(x, x)), ad.tsum(x))
    backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1.0)


def test_zero_grad_resets():
    x = parameter(np.array([2.0]))
    loss = ad.tsum(ad.mul(x, x))
    backward(loss)
    x.zero_grad()
    loss = ad.tsum(ad.mul(x, x))
    backward(loss)
    np.testing.assert_allclose(x.grad, [4.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_matmul_chain_matches_numeric(n, d, seed):
    r = np.random.default_rng(seed)
    a = r.normal(size=(n, d))
    b = r.normal(size=(d, n))
    check_op(lambda x, y: ad.tsum(ad.sigmoid(ad.matmul(x, y))), a, b, tol=1e-5)
