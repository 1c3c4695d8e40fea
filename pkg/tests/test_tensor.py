import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from funs import tensor as tn
from funs.tensor import Tensor

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def mats(rows, cols):
    return arrays(np.float64, (rows, cols), elements=finite)


def scalar_loss(t):
    # random fixed projection so every output coordinate matters
    w = np.random.default_rng(0).normal(size=t.shape)
    return tn.sum_all(tn.mul(t, Tensor(w)))


UNARY = {
    "sigmoid": tn.sigmoid,
    "tanh": tn.tanh,
    "one_minus": tn.one_minus,
    "scale": lambda a: tn.scale(a, -1.7),
    "mul_self": lambda a: tn.mul(a, a),
    "mean_all": tn.mean_all,
}


SEEDS = range(100)


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    f = UNARY[name]
    for seed in SEEDS:
        x = np.random.default_rng(seed).normal(size=(3, 4))
        assert tn.grad_check(lambda t: scalar_loss(f(t)), x) < 1e-4, seed


def test_leaky_relu_gradient():
    for seed in SEEDS:
        x = np.random.default_rng(seed).normal(size=(3, 4))
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # keep away from the kink
        assert tn.grad_check(lambda t: scalar_loss(tn.leaky_relu(t, 0.2)), x) < 1e-4, seed


def test_binary_gradients():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        row, col = rng.normal(size=(1, 2)), rng.normal(size=(3, 1))
        A, B, C = Tensor(a), Tensor(b), Tensor(col)
        checks = [
            (lambda t: scalar_loss(tn.matmul(t, B)), a),
            (lambda t: scalar_loss(tn.matmul(A, t)), b),
            (lambda t: scalar_loss(tn.add_row(tn.matmul(A, B), t)), row),
            (lambda t: scalar_loss(tn.mul_col(A, t)), col),
            (lambda t: scalar_loss(tn.concat(t, tn.mul_col(A, C))), a),
            (lambda t: scalar_loss(tn.sub(A, tn.mul(t, t))), a),
        ]
        for f, x in checks:
            assert tn.grad_check(f, x) < 1e-4, seed


@settings(max_examples=30, deadline=None)
@given(x=mats(3, 4))
def test_elementwise_gradients_absolute(x):
    # absolute agreement holds everywhere, including near-zero gradients
    for f in UNARY.values():
        leaf = Tensor(x, requires_grad=True)
        g = tn.backward(scalar_loss(f(leaf)))[leaf]
        num = np.zeros_like(x)
        for idx in np.ndindex(*x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += 1e-6
            xm[idx] -= 1e-6
            num[idx] = (scalar_loss(f(Tensor(xp))).item() - scalar_loss(f(Tensor(xm))).item()) / 2e-6
        np.testing.assert_allclose(g, num, atol=1e-6)


def test_gather_and_segment_gradients(rng):
    x = rng.normal(size=(5, 3))
    idx = np.array([4, 0, 0, 2, 4, 4, 1])
    order = np.argsort(idx, kind="stable")
    plan = (order, np.searchsorted(idx[order], np.arange(5)))
    assert tn.grad_check(lambda t: scalar_loss(tn.gather_rows(t, idx)), x) < 1e-6
    assert tn.grad_check(lambda t: scalar_loss(tn.gather_rows(t, idx, plan)), x) < 1e-6

    seg = np.array([0, 0, 1, 3, 3, 3, 4])  # segment 2 is empty
    starts = np.searchsorted(seg, np.arange(5))
    y = rng.normal(size=(7, 2))
    assert tn.grad_check(lambda t: scalar_loss(tn.segment_sum(t, starts, seg)), y) < 1e-6
    s = rng.normal(size=(7, 1))
    assert tn.grad_check(lambda t: scalar_loss(tn.segment_softmax(t, starts, seg)), s) < 1e-6


def test_gather_plan_matches_scatter(rng):
    x = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    idx = np.array([3, 3, 0, 1, 3])
    order = np.argsort(idx, kind="stable")
    plan = (order, np.searchsorted(idx[order], np.arange(4)))
    w = Tensor(rng.normal(size=(5, 2)))
    g1 = tn.backward(tn.sum_all(tn.mul(tn.gather_rows(x, idx), w)))[x]
    tn.zero_grad([x])
    g2 = tn.backward(tn.sum_all(tn.mul(tn.gather_rows(x, idx, plan), w)))[x]
    np.testing.assert_allclose(g1, g2, atol=1e-14)
    assert np.all(g1[2] == 0)


@settings(max_examples=25, deadline=None)
@given(scores=arrays(np.float64, (6, 1), elements=st.floats(-500, 500)))
def test_segment_softmax_normalized_and_stable(scores):
    seg = np.array([0, 0, 0, 1, 2, 2])
    out = tn.segment_softmax(Tensor(scores), np.array([0, 3, 4]), seg).data[:, 0]
    assert np.all(np.isfinite(out)) and np.all(out >= 0)
    np.testing.assert_allclose(np.bincount(seg, out), 1.0, atol=1e-12)


def test_shared_subexpression_matches_duplicated_tree(rng):
    x0 = rng.normal(size=(3, 3))
    x = Tensor(x0, requires_grad=True)
    y = tn.tanh(x)
    dag = tn.sum_all(tn.mul(y, tn.add(y, y)))
    g_dag = tn.backward(dag)[x]

    x2 = Tensor(x0, requires_grad=True)
    tree = tn.sum_all(tn.mul(tn.tanh(x2), tn.add(tn.tanh(x2), tn.tanh(x2))))
    g_tree = tn.backward(tree)[x2]
    np.testing.assert_allclose(g_dag, g_tree, rtol=1e-13)
    np.testing.assert_allclose(g_dag, 4 * np.tanh(x0) * (1 - np.tanh(x0) ** 2), rtol=1e-12)


def test_backward_needs_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(tn.ShapeError):
        tn.backward(tn.mul(x, x))


def test_shape_mismatch_raises():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2)))
    with pytest.raises(tn.ShapeError):
        tn.add(a, b)
    with pytest.raises(tn.ShapeError):
        tn.matmul(a, a)


def test_no_grad_records_nothing():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with tn.no_grad():
        y = tn.mul(x, x)
    assert not y.requires_grad
    y2 = tn.mul(x, x)
    assert y2.requires_grad


def test_deep_chain_does_not_recurse():
    x = Tensor(np.full((1, 1), 0.5), requires_grad=True)
    y = x
    for _ in range(5000):
        y = tn.scale(y, 1.0)
    assert tn.backward(y)[x][0, 0] == 1.0


def test_dropout_behaviour(rng):
    x = Tensor(np.ones((400, 50)))
    assert tn.dropout(x, 0.25, rng, training=False) is x
    out = tn.dropout(x, 0.25, rng, training=True).data
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
    assert abs(out.mean() - 1.0) < 0.02
    with pytest.raises(ValueError):
        tn.dropout(x, 1.0, rng)
    with pytest.raises(ValueError):
        tn.dropout(x, -0.1, rng)


def test_grad_check_flags_nonfinite():
    with pytest.raises(FloatingPointError):
        tn.grad_check(lambda t: tn.sum_all(tn.scale(t, np.inf)), np.ones((1, 1)))


def test_gradients_accumulate_across_backward_calls():
    x = Tensor(np.ones((1, 2)), requires_grad=True)
    tn.backward(tn.sum_all(x))
    tn.backward(tn.sum_all(x))
    np.testing.assert_array_equal(x.grad, [[2.0, 2.0]])


def test_segment_ops_with_empty_segments():
    x = Tensor(np.arange(6.0).reshape(3, 2))
    seg = np.array([1, 1, 3])  # segments 0, 2 and 4 are empty
    starts = np.searchsorted(seg, np.arange(5))
    out = tn.segment_sum(x, starts, seg).data
    np.testing.assert_array_equal(out, [[0, 0], [2, 4], [0, 0], [4, 5], [0, 0]])
    sm = tn.segment_softmax(Tensor([[0.0], [0.0], [7.0]]), starts, seg).data[:, 0]
    np.testing.assert_allclose(sm, [0.5, 0.5, 1.0])


def test_zero_grad_clears():
    x = Tensor(np.ones((1, 2)), requires_grad=True)
    tn.backward(tn.sum_all(x))
    assert x.grad is not None
    tn.zero_grad([x])
    assert x.grad is None or not np.any(x.grad)
