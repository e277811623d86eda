import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from metav import tensor as T
from oracles import central_diff, max_rel_error


def leaf(x):
    return T.Tensor(x, requires_grad=True)


# --- forward examples -------------------------------------------------------

def test_softmax_symmetric_logits():
    assert np.allclose(T.softmax(T.Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_tanh_at_origin():
    assert T.tanh(T.Tensor([0.0])).data[0] == 0.0


def test_matmul_identity(rng):
    v = rng.standard_normal((3, 1))
    assert np.array_equal(T.matmul(T.Tensor(np.eye(3)), T.Tensor(v)).data, v)


def test_forward_is_memoized():
    node = T.tanh(T.Tensor([[0.3, -0.2]]))
    assert T.forward(node) is T.forward(node)


def test_matmul_shape_error_names_dims():
    with pytest.raises(T.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))


def test_rank_three_rejected():
    with pytest.raises(T.ShapeError):
        T.Tensor(np.zeros((2, 2, 2)))


def test_nan_aborts():
    with pytest.raises(T.NonFiniteError):
        T.Tensor([np.nan])
    with pytest.raises(T.NonFiniteError), np.errstate(over="ignore"):
        T.scale(T.Tensor([1e308]), 10.0)


def test_log_floor_keeps_zero_finite():
    out = T.log(T.Tensor([0.0, 1.0]))
    assert np.isfinite(out.data).all()
    assert out.data[0] == pytest.approx(np.log(T.LOG_FLOOR))


# --- backward examples ------------------------------------------------------

def test_mean_gradient_is_uniform():
    x = leaf([1.0, 2.0, 3.0, 4.0])
    g = T.backward(T.mean(x), [x])[x]
    assert np.array_equal(g, np.full(4, 0.25))


def test_tanh_gradient_at_zero():
    w = leaf([0.0])
    assert T.backward(T.reduce_sum(T.tanh(w)), [w])[w][0] == 1.0


def test_disconnected_leaf_gets_zero_gradient():
    a, b = leaf([1.0, 2.0]), leaf([[3.0]])
    g = T.backward(T.mean(a), [a, b])
    assert np.array_equal(g[b], np.zeros((1, 1)))


def test_non_scalar_root_rejected():
    a = leaf([1.0, 2.0])
    with pytest.raises(T.ShapeError, match="scalar"):
        T.backward(T.tanh(a), [a])


def test_two_layer_relu_net_matches_finite_differences(rng):
    x = rng.uniform(-1, 1, (5, 4))
    y = rng.standard_normal((5, 2))
    w1, b1 = rng.standard_normal((4, 6)), rng.standard_normal(6) * 0.1
    w2, b2 = rng.standard_normal((6, 2)), rng.standard_normal(2) * 0.1
    params = [w1, b1, w2, b2]

    def loss(ps):
        h = T.relu(T.add(T.matmul(T.Tensor(x), ps[0]), ps[1]))
        return T.mse(T.add(T.matmul(h, ps[2]), ps[3]), T.Tensor(y))

    leaves = [leaf(p) for p in params]
    grads = T.backward(loss(leaves), leaves)
    for p, lf in zip(params, leaves):
        num = central_diff(lambda: loss([T.Tensor(q) for q in params]).data[0], p)
        assert max_rel_error(grads[lf], num) < 1e-6


def test_every_op_kind_matches_finite_differences(rng):
    a0 = rng.uniform(-1, 1, (3, 4))
    w0 = rng.standard_normal((4, 3))
    c0 = rng.standard_normal((3, 3))

    def loss(a, w, c):
        z = T.matmul(a, w)                                   # matmul
        z = T.add(z, T.scale(c, 0.5))                        # add, scale
        z = T.mul(z, T.sigmoid(c))                           # mul, sigmoid
        h = T.concat([T.relu(z), T.tanh(z)], axis=1)         # relu, tanh, concat
        p = T.softmax(T.reshape(h, (2, 9)))                  # reshape, softmax
        lp = T.mean(T.log(p))                                # log, mean
        return T.add(T.add(lp, T.mse(z, c)),                 # mse
                     T.add(T.reduce_sum(T.scale(a, 0.1)),    # sum
                           T.bce_logits(T.reshape(z, (1, 9)), 1.0)))

    params = [a0, w0, c0]
    leaves = [leaf(p) for p in params]
    root = loss(*leaves)
    kinds = set()
    stack = [root]
    while stack:
        n = stack.pop()
        kinds.add(n.op)
        stack.extend(n.parents)
    assert kinds >= {"matmul", "add", "relu", "tanh", "sigmoid", "softmax", "log", "mean", "concat", "mse",
                     "scale"}
    grads = T.backward(root, leaves)
    for p, lf in zip(params, leaves):
        num = central_diff(lambda: loss(*[T.Tensor(q) for q in params]).data[0], p)
        assert max_rel_error(grads[lf], num) < 1e-6


def test_shared_subexpression_accumulates():
    x = leaf([2.0])
    y = T.mul(x, x)  # dy/dx = 2x
    assert T.backward(T.reduce_sum(T.add(y, x)), [x])[x][0] == pytest.approx(5.0)


def test_deep_chain_does_not_recurse(rng):
    x = leaf([0.1])
    y = x
    for _ in range(5000):
        y = T.scale(y, 1.0)
    assert T.backward(T.reduce_sum(y), [x])[x][0] == 1.0


# --- Adam -------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = np.array([1.0, -2.0])
    opt = T.Adam([p])
    T.adam_step(opt, [p], [np.zeros(2)])
    assert np.array_equal(p, [1.0, -2.0])
    assert opt.t == 1
    assert np.array_equal(opt.m[0], np.zeros(2)) and np.array_equal(opt.v[0], np.zeros(2))


def test_adam_first_step_moves_by_lr():
    p = np.array([0.5, 0.5, 0.5])
    g = np.array([3.0, -0.2, 1e-3])
    opt = T.Adam([p], lr=1e-3)
    opt.step([p], [g])
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    expected = 0.5 - 1e-3 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p, expected, rtol=0, atol=1e-15)
    assert np.allclose(np.abs(p - 0.5), 1e-3, rtol=1e-4)


def test_adam_deterministic():
    g = np.array([0.3, -0.1])
    runs = []
    for _ in range(2):
        p = np.array([1.0, 1.0])
        opt = T.Adam([p])
        for _ in range(5):
            opt.step([p], [g])
        runs.append(p.copy())
    assert np.array_equal(*runs)


def test_adam_shape_mismatch():
    p = np.zeros(3)
    opt = T.Adam([p])
    with pytest.raises(T.ShapeError):
        opt.step([p], [np.zeros(2)])


def test_adam_t_counts_calls():
    p = np.zeros(2)
    opt = T.Adam([p])
    for i in range(4):
        opt.step([p], [np.ones(2)])
        assert opt.t == i + 1


# --- properties -------------------------------------------------------------

finite = st.floats(-50, 50, allow_nan=False)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=8), elements=finite))
def test_softmax_rows_on_simplex(x):
    p = T.softmax(T.Tensor(x)).data
    assert (p >= 0).all()
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)


@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-2, 2)),
       hnp.arrays(np.float64, (4, 2), elements=st.floats(-2, 2)))
def test_forward_backward_deterministic(a, w):
    def run():
        wa, ww = leaf(a), leaf(w)
        out = T.mean(T.tanh(T.matmul(wa, ww)))
        g = T.backward(out, [wa, ww])
        return out.data.copy(), g[wa], g[ww]

    r1, r2 = run(), run()
    for x, y in zip(r1, r2):
        assert np.array_equal(x, y)


@given(hnp.arrays(np.float64, (2, 3), elements=st.floats(-3, 3)))
def test_grad_shape_matches_value(x):
    a = leaf(x)
    root = T.mean(T.softmax(T.mul(a, a)))
    T.backward(root, [a])
    stack = [root]
    while stack:
        n = stack.pop()
        if n.grad is not None:
            assert n.grad.shape == n.data.shape
        stack.extend(n.parents)
