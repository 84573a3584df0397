"""Tensor engine: values against independent oracles, gradients against
central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stpose import tensor as T
from stpose.gradcheck import fd_check
from stpose.optim import Adam
from stpose.tensor import ShapeError, Tensor


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# ---------------------------------------------------------------- relayout


def test_build_and_shape_error():
    t = T.build((2, 3), [1, 2, 3, 4, 5, 6])
    assert t.shape == (2, 3)
    assert t.data[1, 2] == 6.0
    with pytest.raises(ShapeError):
        T.build((2, 2), [1, 2, 3])


def test_axis_swap_places_tn_at_nt():
    # (T=2, N=3, d=4) -> (3, 2, 4) with element [t, n, :] landing at [n, t, :]
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 3, 4)))
    y = T.transpose(x, (1, 0, 2))
    for t in range(2):
        for n in range(3):
            np.testing.assert_array_equal(y.data[n, t], x.data[t, n])


def test_transpose_identity_perm():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    np.testing.assert_array_equal(T.transpose(x, (0, 1, 2)).data, x.data)


def test_reshape_round_trip_vs_index_arithmetic():
    # enumerate all 6 indices of (2,3) -> (6) -> (3,2)
    x = Tensor(np.arange(6.0).reshape(2, 3))
    flat = T.reshape(x, (6,))
    back = T.reshape(flat, (3, 2))
    for i in range(2):
        for j in range(3):
            k = i * 3 + j  # row-major flat position
            assert flat.data[k] == x.data[i, j]
            assert back.data[k // 2, k % 2] == x.data[i, j]
    again = T.reshape(back, (2, 3))
    np.testing.assert_array_equal(again.data, x.data)


@given(st.permutations(range(3)))
@settings(max_examples=12, deadline=None)
def test_transpose_then_inverse_is_identity(perm):
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    inv = tuple(np.argsort(perm))
    y = T.transpose(T.transpose(x, perm), inv)
    np.testing.assert_array_equal(y.data, x.data)


def test_reshape_rejects_extent_mismatch():
    x = Tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        T.reshape(x, (4, 2))
    with pytest.raises(ShapeError):
        T.transpose(x, (0, 0))


def test_slice_and_concat_round_trip():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((4, 5)))
    parts = [T.slice_axis(x, 1, 0, 2), T.slice_axis(x, 1, 2, 5)]
    np.testing.assert_array_equal(T.concat(parts, 1).data, x.data)
    with pytest.raises(ShapeError):
        T.slice_axis(x, 1, 3, 3)  # empty
    with pytest.raises(ShapeError):
        T.slice_axis(x, 2, 0, 1)  # axis out of range


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    rng = np.random.default_rng(2)
    a = Tensor(rng.standard_normal((4, 4)))
    out = T.matmul(a, Tensor(np.eye(4)))
    np.testing.assert_array_equal(out.data, a.data)


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3, 5))
    b = rng.standard_normal((5, 2))
    want = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(5):
                want[i, j] += a[i, k] * b[k, j]
    got = T.matmul(Tensor(a), Tensor(b)).data
    assert np.abs(got - want).max() < 1e-12


def test_matmul_batched_shape_and_errors():
    a = Tensor(np.zeros((2, 3, 4)))
    b = Tensor(np.zeros((2, 4, 4)))
    assert T.matmul(a, b).shape == (2, 3, 4)
    with pytest.raises(ShapeError):
        T.matmul(a, Tensor(np.zeros((2, 3, 4))))


# ---------------------------------------------------------------- softmax


def test_softmax_constant_vector_is_uniform():
    out = T.softmax(Tensor(np.full(5, 1.7)), axis=0)
    np.testing.assert_allclose(out.data, 0.2, atol=1e-15)


def test_softmax_closed_form():
    x = np.array([1.0, 2.0, 3.0])
    e = np.exp(x)
    want = e / e.sum()
    got = T.softmax(Tensor(x), axis=0).data
    assert np.abs(got - want).max() < 1e-12


@given(st.floats(-30, 30))
@settings(max_examples=25, deadline=None)
def test_softmax_shift_invariance(c):
    x = np.linspace(-2, 2, 7)
    a = T.softmax(Tensor(x), 0).data
    b = T.softmax(Tensor(x + c), 0).data
    assert np.abs(a - b).max() < 1e-12


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_softmax_rows_are_probability_vectors(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 6)) * 5
    y = T.softmax(Tensor(x), axis=1).data
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)


# ---------------------------------------------------------------- backward


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.reduce_sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_on_leaf_scalar():
    x = Tensor(3.0, requires_grad=True)
    x.backward()
    np.testing.assert_array_equal(x.grad, 1.0)


def test_backward_rejects_non_scalar():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ShapeError):
        x.backward()


def test_backward_accumulates_and_clears():
    x = Tensor(np.ones(4), requires_grad=True)
    loss = T.reduce_sum(T.mul(x, x))
    loss.backward()
    first = x.grad.copy()
    loss.backward()
    np.testing.assert_array_equal(x.grad, 2 * first)
    x.clear_grad()
    loss.backward()
    np.testing.assert_array_equal(x.grad, first)


def test_three_layer_composition_matches_finite_differences():
    rng = np.random.default_rng(7)
    w1 = rand(rng, 4, 5)
    w2 = rand(rng, 5, 3)
    x = rand(rng, 2, 4)
    c = Tensor(rng.standard_normal((2, 3)))

    def loss():
        h = T.gelu(T.matmul(x, w1))
        y = T.softmax(T.matmul(h, w2), axis=-1)
        return T.reduce_sum(T.mul(y, c))

    assert fd_check(loss, [x, w1, w2], h=1e-6) < 1e-5


OPS = {
    "add": lambda a, b: T.add(a, b),
    "sub": lambda a, b: T.sub(a, b),
    "mul": lambda a, b: T.mul(a, b),
    "div": lambda a, b: T.div(a, T.add_scalar(T.mul(b, b), 0.5)),
    "atan2": lambda a, b: T.atan2(a, b),
    "matmul2": lambda a, b: T.matmul(a, b.transpose((1, 0))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_binary_op_gradients(name):
    rng = np.random.default_rng(hash(name) % 2 ** 32)
    a = rand(rng, 3, 4)
    b = rand(rng, 3, 4)
    c = Tensor(rng.standard_normal(OPS[name](a, b).shape))
    assert fd_check(lambda: T.reduce_sum(T.mul(OPS[name](a, b), c)), [a, b]) < 1e-5


UNARY = {
    "neg": T.neg,
    "scale": lambda t: T.scale(t, -2.5),
    "add_scalar": lambda t: T.add_scalar(t, 1.25),
    "sqrt": lambda t: T.sqrt(T.add_scalar(T.mul(t, t), 1.0)),
    "sin": T.sin,
    "cos": T.cos,
    "sigmoid": T.sigmoid,
    "gelu": T.gelu,
    "softmax": lambda t: T.softmax(t, axis=-1),
    "reshape": lambda t: T.reshape(t, (4, 3)),
    "transpose": lambda t: T.transpose(t, (1, 0)),
    "slice": lambda t: T.slice_axis(t, 1, 1, 3),
    "mean": lambda t: T.reduce_mean(t, axis=0, keepdims=True),
    "sum_all": lambda t: T.reduce_sum(t),
    "vecnorm": lambda t: T.vecnorm(t, axis=-1),
    "expand": lambda t: T.expand(T.reshape(t, (3, 1, 4)), (2, 3, 5, 4)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_gradients(name):
    rng = np.random.default_rng(hash(name) % 2 ** 32)
    x = rand(rng, 3, 4)
    out_shape = UNARY[name](x).shape
    c = Tensor(rng.standard_normal(out_shape))
    assert fd_check(lambda: T.reduce_sum(T.mul(UNARY[name](x), c)), [x]) < 1e-5


def test_concat_where_layernorm_gradients():
    rng = np.random.default_rng(11)
    a = rand(rng, 2, 3)
    b = rand(rng, 2, 3)
    mask = rng.standard_normal((2, 6)) > 0
    c = Tensor(rng.standard_normal((2, 6)))

    def loss():
        cat = T.concat([a, b], axis=1)
        sel = T.where(mask, cat, T.scale(cat, 0.25))
        return T.reduce_sum(T.mul(sel, c))

    assert fd_check(loss, [a, b]) < 1e-5

    g = rand(rng, 5)
    bias = rand(rng, 5)
    x = rand(rng, 4, 5)
    c2 = Tensor(rng.standard_normal((4, 5)))
    assert fd_check(lambda: T.reduce_sum(T.mul(T.layer_norm(x, g, bias), c2)),
                    [x, g, bias]) < 1e-5


def test_backward_determinism():
    rng = np.random.default_rng(13)
    x = rand(rng, 3, 3)
    w = rand(rng, 3, 3)
    loss = T.reduce_sum(T.softmax(T.matmul(x, w), axis=-1))
    loss.backward()
    g1 = x.grad.copy()
    x.clear_grad(), w.clear_grad()
    loss.backward()
    np.testing.assert_array_equal(x.grad, g1)


# ---------------------------------------------------------------- adam


def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=1e-2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_single_step_closed_form():
    p = Tensor(1.0, requires_grad=True)
    p.grad = np.asarray(0.5)
    opt = Adam([p], lr=1e-4)
    opt.step()
    # hand-computed: m=0.05, v=2.5e-4, m_hat=0.5, v_hat=0.25
    want = 1.0 - 1e-4 * 0.5 / (np.sqrt(0.25) + 1e-8)
    assert abs(p.item() - want) < 1e-16


def test_adam_update_linear_in_lr_on_first_step():
    deltas = []
    for lr in (1e-3, 1e-4):
        p = Tensor(np.array([2.0, -1.0, 0.5]), requires_grad=True)
        p.grad = np.array([0.3, -0.7, 2.0])
        Adam([p], lr=lr).step()
        deltas.append(np.array([2.0, -1.0, 0.5]) - p.data)
    np.testing.assert_allclose(deltas[0], 10.0 * deltas[1], rtol=1e-9)


def test_adam_rejects_bad_lr_and_shapes():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ValueError):
        Adam([p], lr=-1e-3)
    Adam([p], lr=0.0)   # zero is legal: moments advance, data stays put
    opt = Adam([p], lr=1e-3)
    p.grad = np.zeros(3)
    with pytest.raises(ValueError):
        opt.step()
