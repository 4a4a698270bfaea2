"""Autodiff engine: layer oracles, backprop contract, optimizer and losses."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import conv_oracle, maxpool_oracle
from trafficmae.errors import ArgumentError, ShapeError, VocabularyError
from trafficmae.tensor import (
    GRU, Adam, AdamState, Dense, GruParams, Module, Tensor, adam_step, backward, grad, ops,
)
from trafficmae.tensor.losses import CE_EPSILON, categorical_ce, mse, proportional_weights, weighted_mse

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# -- independent oracles --------------------------------------------------------

def matvec_oracle(W, x, b):
    return [sum(W[u][f] * x[f] for f in range(len(x))) + b[u] for u in range(len(b))]


def sigmoid_oracle(z):
    return 1.0 / (1.0 + np.exp(-z))


def gru_step_oracle(x, h, P):
    c = sigmoid_oracle(P["Wc"] @ x + P["Uc"] @ h)
    r = sigmoid_oracle(P["Wr"] @ x + P["Ur"] @ h)
    cand = np.tanh(P["W"] @ x + P["U"] @ (r * h))
    return c * h + (1 - c) * cand


def gru_params(rng, E, F, scale=0.5):
    names = ("Wc", "Wr", "W", "Uc", "Ur", "U")
    mats = {n: rng.normal(0, scale, size=(E, F) if n.startswith("W") else (E, E)) for n in names}
    return mats, GruParams(*(Tensor(mats[n], requires_grad=True) for n in names))


# -- dense ----------------------------------------------------------------------

def test_dense_identity_linear():
    y = ops.dense(Tensor([1.0, -2.0, 3.0]), Tensor(np.eye(3)), Tensor(np.zeros(3)), "linear")
    np.testing.assert_array_equal(y.data, [1, -2, 3])


def test_dense_identity_relu():
    y = ops.dense(Tensor([1.0, -2.0, 3.0]), Tensor(np.eye(3)), Tensor(np.zeros(3)), "relu")
    np.testing.assert_array_equal(y.data, [1, 0, 3])


def test_dense_matches_naive_matvec():
    rng = np.random.default_rng(3)
    for _ in range(20):
        W, x, b = rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=4)
        y = ops.dense(Tensor(x), Tensor(W), Tensor(b))
        np.testing.assert_allclose(y.data, matvec_oracle(W.tolist(), x.tolist(), b.tolist()), atol=1e-12)


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.dense(Tensor(np.ones(4)), Tensor(np.ones((2, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError):
        ops.dense(Tensor(np.ones(3)), Tensor(np.ones((2, 3))), Tensor(np.zeros(3)))


def test_unknown_activation():
    with pytest.raises(ArgumentError):
        ops.dense(Tensor(np.ones(3)), Tensor(np.eye(3)), Tensor(np.zeros(3)), "gelu")


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-500, 500)))
def test_softmax_is_a_distribution(z):
    s = ops.softmax(Tensor(z)).data
    assert np.all(s >= 0)
    assert abs(s.sum() - 1.0) <= 1e-9


# -- conv1d / maxpool / upsample -----------------------------------------------

def test_conv1d_identity_kernel():
    x = np.random.default_rng(0).normal(size=(7, 1))
    y = ops.conv1d(Tensor(x), Tensor(np.ones((1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(y.data, x)


def test_conv1d_zero_kernels():
    x = np.random.default_rng(0).normal(size=(9, 3))
    y = ops.conv1d(Tensor(x), Tensor(np.zeros((4, 3, 3))), Tensor(np.zeros(4)))
    assert y.shape == (7, 4)
    assert not y.data.any()


def test_conv1d_random_oracle():
    rng = np.random.default_rng(1)
    x, K, b = rng.normal(size=(10, 2)), rng.normal(size=(3, 3, 2)), rng.normal(size=3)
    y = ops.conv1d(Tensor(x), Tensor(K), Tensor(b))
    np.testing.assert_allclose(y.data, conv_oracle(x, K, b), atol=1e-12)


@given(st.integers(1, 64), st.integers(1, 4), st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_conv1d_equals_oracle(T, c_in, c_out, n, seed):
    n = min(n, T)
    rng = np.random.default_rng(seed)
    x, K, b = rng.normal(size=(T, c_in)), rng.normal(size=(c_out, n, c_in)), rng.normal(size=c_out)
    np.testing.assert_allclose(ops.conv1d(Tensor(x), Tensor(K), Tensor(b)).data, conv_oracle(x, K, b),
                               rtol=0, atol=1e-9)


def test_conv1d_same_padding_keeps_length():
    rng = np.random.default_rng(2)
    x, K, b = rng.normal(size=(6, 2)), rng.normal(size=(3, 3, 2)), rng.normal(size=3)
    y = ops.conv1d(Tensor(x), Tensor(K), Tensor(b), padding="same")
    padded = np.vstack([np.zeros((1, 2)), x, np.zeros((1, 2))])
    np.testing.assert_allclose(y.data, conv_oracle(padded, K, b), atol=1e-12)


def test_conv1d_kernel_longer_than_input():
    with pytest.raises(ShapeError):
        ops.conv1d(Tensor(np.ones((2, 1))), Tensor(np.ones((1, 3, 1))), Tensor(np.zeros(1)))


def test_conv1d_batch_matches_per_sample():
    rng = np.random.default_rng(4)
    x, K, b = rng.normal(size=(3, 8, 2)), rng.normal(size=(4, 3, 2)), rng.normal(size=4)
    batched = ops.conv1d(Tensor(x), Tensor(K), Tensor(b)).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], conv_oracle(x[i], K, b), atol=1e-12)


def test_maxpool_hand_example():
    y = ops.maxpool1d(Tensor(np.array([[1.0], [3.0], [2.0], [5.0]])), 2, 2)
    np.testing.assert_array_equal(y.data[:, 0], [3, 5])


def test_maxpool_constant_input():
    y = ops.maxpool1d(Tensor(np.full((9, 2), 4.5)), 3, 2)
    assert np.all(y.data == 4.5)
    assert y.shape == ((9 - 3) // 2 + 1, 2)


@given(st.integers(1, 64), st.integers(1, 3), st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_maxpool_equals_oracle(T, C, p, s, seed):
    p = min(p, T)
    x = np.random.default_rng(seed).normal(size=(T, C))
    np.testing.assert_array_equal(ops.maxpool1d(Tensor(x), p, s).data, maxpool_oracle(x, p, s))


def test_maxpool_tie_routes_gradient_to_first_index():
    x = Tensor(np.array([[2.0], [2.0], [1.0], [1.0]]), requires_grad=True)
    (g,) = grad(ops.sum(ops.maxpool1d(x, 2, 2)), [x])
    np.testing.assert_array_equal(g[:, 0], [1, 0, 1, 0])


def test_maxpool_window_too_large():
    with pytest.raises(ShapeError):
        ops.maxpool1d(Tensor(np.ones((3, 1))), 4)
    with pytest.raises(ArgumentError):
        ops.maxpool1d(Tensor(np.ones((3, 1))), 2, 0)


def test_upsample_identity_and_repeat():
    x = np.array([[1.0, 10.0], [2.0, 20.0]])
    np.testing.assert_array_equal(ops.upsample1d(Tensor(x), 1).data, x)
    np.testing.assert_array_equal(ops.upsample1d(Tensor(x), 2).data, x[[0, 0, 1, 1]])
    with pytest.raises(ArgumentError):
        ops.upsample1d(Tensor(x), 0)


def test_upsample_sum_gradient_is_size():
    x = Tensor(np.random.default_rng(0).normal(size=(5, 3)), requires_grad=True)
    fn = lambda: ops.sum(ops.upsample1d(x, 3))  # noqa: E731
    (g,) = grad(fn(), [x])
    assert np.all(g == 3.0)
    h = 1e-3
    x.data[2, 1] += h
    up = fn().data
    x.data[2, 1] -= 2 * h
    down = fn().data
    assert abs((up - down) / (2 * h) - 3.0) < 1e-9


# -- GRU ------------------------------------------------------------------------

def test_gru_step_zero_params_halves_state():
    E, F = 3, 2
    p = GruParams(*(Tensor(np.zeros((E, F))) for _ in range(3)), *(Tensor(np.zeros((E, E))) for _ in range(3)))
    h = np.array([0.4, -1.2, 3.0])
    np.testing.assert_array_equal(ops.gru_step(Tensor(np.ones(F)), Tensor(h), p).data, 0.5 * h)
    assert not ops.gru_step(Tensor(np.ones(F)), Tensor(np.zeros(E)), p).data.any()


@given(arrays(np.float64, st.integers(1, 6), elements=finite), st.integers(1, 4))
def test_gru_zero_params_property(h, F):
    E = h.size
    p = GruParams(*(Tensor(np.zeros((E, F))) for _ in range(3)), *(Tensor(np.zeros((E, E))) for _ in range(3)))
    out = ops.gru_step(Tensor(np.ones(F)), Tensor(h), p).data
    assert np.array_equal(out, 0.5 * h)


def test_gru_step_matches_equations():
    rng = np.random.default_rng(5)
    for _ in range(20):
        mats, p = gru_params(rng, 3, 2)
        x, h = rng.normal(size=2), rng.normal(size=3)
        np.testing.assert_allclose(ops.gru_step(Tensor(x), Tensor(h), p).data, gru_step_oracle(x, h, mats),
                                   atol=1e-12)


def test_gru_params_shape_check():
    with pytest.raises(ShapeError):
        GruParams(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 1))), Tensor(np.zeros((3, 2))),
                  Tensor(np.zeros((3, 3))), Tensor(np.zeros((3, 3))), Tensor(np.zeros((3, 3))))
    _, p = gru_params(np.random.default_rng(0), 3, 2)
    with pytest.raises(ShapeError):
        ops.gru_sequence(Tensor(np.zeros((1, 4, 5))), p)


@pytest.mark.parametrize("use_mask", [False, True])
def test_fused_gru_equals_unrolled(use_mask):
    rng = np.random.default_rng(6)
    mats, p = gru_params(rng, 4, 3)
    x = Tensor(rng.normal(size=(3, 7, 3)), requires_grad=True)
    mask = rng.random((3, 7)) < 0.6 if use_mask else None
    R = rng.normal(size=(3, 7, 4))
    fused = ops.gru_sequence(x, p, mask)
    ref = ops.gru_unrolled(x, p, mask=mask)
    np.testing.assert_allclose(fused.data, ref.data, atol=1e-12)
    leaves = [x, p.Wc, p.Wr, p.W, p.Uc, p.Ur, p.U]
    g1 = grad(ops.sum(ops.mul(fused, R)), leaves)
    g2 = grad(ops.sum(ops.mul(ref, R)), leaves)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_masked_steps_carry_state():
    rng = np.random.default_rng(7)
    _, p = gru_params(rng, 2, 1)
    x = rng.normal(size=(1, 5, 1))
    mask = np.array([[True, True, False, False, True]])
    h = ops.gru_sequence(Tensor(x), p, mask).data[0]
    np.testing.assert_array_equal(h[2], h[1])
    np.testing.assert_array_equal(h[3], h[1])
    full_mask = ops.gru_sequence(Tensor(x), p, np.zeros((1, 5), bool)).data
    assert not full_mask.any()


def test_gru_layer_last_state():
    layer = GRU(2, 3, return_sequences=False, rng=np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 6, 2))
    seq = ops.gru_sequence(Tensor(x), layer.params).data
    np.testing.assert_array_equal(layer(Tensor(x)).data, seq[:, -1, :])


# -- embedding ------------------------------------------------------------------

def test_embedding_lookup_and_mask():
    table = Tensor(np.arange(12.0).reshape(4, 3))
    out, mask = ops.embedding(np.array([2, 0, 3]), table, mask_value=0)
    np.testing.assert_array_equal(out.data, table.data[[2, 0, 3]])
    np.testing.assert_array_equal(mask, [True, False, True])
    _, mask = ops.embedding(np.zeros(5, dtype=int), table, mask_value=0)
    assert not mask.any()


def test_embedding_out_of_vocabulary():
    table = Tensor(np.zeros((4, 2)))
    with pytest.raises(VocabularyError):
        ops.embedding(np.array([1, 4]), table)
    with pytest.raises(VocabularyError):
        ops.embedding(np.array([-1]), table)
    with pytest.raises(VocabularyError):
        ops.embedding(np.array([1.5]), table)


def test_embedding_gradient_accumulates_repeats():
    table = Tensor(np.zeros((3, 2)), requires_grad=True)
    out, _ = ops.embedding(np.array([1, 1, 2]), table)
    (g,) = grad(ops.sum(out), [table])
    np.testing.assert_array_equal(g, [[0, 0], [2, 2], [1, 1]])


# -- backprop -------------------------------------------------------------------

def test_backprop_sum_gives_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    (g,) = grad(ops.sum(x), [x])
    np.testing.assert_array_equal(g, np.ones((3, 4)))


def test_backprop_dot_product():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(ops.sum(ops.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backprop_non_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ArgumentError):
        backward(ops.mul(x, 2.0))


def test_unused_leaf_gets_zero_gradient():
    x, y = Tensor(np.ones(2), requires_grad=True), Tensor(np.ones(3), requires_grad=True)
    gx, gy = grad(ops.sum(x), [x, y])
    assert gy.shape == (3,) and not gy.any()
    assert gx.shape == x.shape


def test_diamond_graph_accumulates():
    x = Tensor([3.0], requires_grad=True)
    y = ops.mul(x, x)
    (g,) = grad(ops.sum(ops.add(y, ops.mul(y, 2.0))), [x])
    np.testing.assert_allclose(g, [18.0])


def test_no_graph_without_requires_grad():
    y = ops.mul(Tensor([1.0]), Tensor([2.0]))
    assert not y.requires_grad and y._parents == ()


def test_module_parameter_order_is_registration_order():
    class Two(Module):
        def __init__(self):
            self.second = Dense(2, 2)
            self.first = Dense(2, 1)
            self.stack = [Dense(1, 1), Dense(1, 1)]

    names = [n for n, _ in Two().named_parameters()]
    assert names == ["second.W", "second.b", "first.W", "first.b",
                     "stack.0.W", "stack.0.b", "stack.1.W", "stack.1.b"]


def test_dropout_eval_is_identity_and_train_is_inverted():
    x = Tensor(np.ones((200, 50)))
    assert ops.dropout(x, 0.3, np.random.default_rng(0), training=False) is x
    y = ops.dropout(x, 0.3, np.random.default_rng(0)).data
    assert set(np.unique(y)) <= {0.0, 1.0 / 0.7}
    assert abs(y.mean() - 1.0) < 0.02
    np.testing.assert_array_equal(y, ops.dropout(x, 0.3, np.random.default_rng(0)).data)


# -- Adam -----------------------------------------------------------------------

def test_adam_zero_gradient_is_identity():
    p = np.array([1.0, -2.0])
    state = AdamState()
    adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p, [1.0, -2.0])
    assert state.t == 1 and not state.m[0].any() and not state.v[0].any()


@given(arrays(np.float64, st.integers(1, 5), elements=finite), st.integers(1, 5))
def test_adam_zero_gradient_property(values, steps):
    p = values.copy()
    state = AdamState()
    for _ in range(steps):
        adam_step([p], [np.zeros_like(p)], state)
    assert np.array_equal(p, values) and state.t == steps


def test_adam_first_step():
    p = np.array([0.5])
    adam_step([p], [np.array([1.0])], AdamState(lr=1e-3))
    assert abs((0.5 - p[0]) - 1e-3 / (1 + 1e-8)) < 1e-15


def test_adam_two_steps_on_quadratic():
    # f(x) = x^2, g = 2x; hand-stepped bias-corrected Adam
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    x_ref, m, v = 1.5, 0.0, 0.0
    p, state = np.array([1.5]), AdamState(lr=lr)
    for t in (1, 2):
        g = 2 * x_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x_ref -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        adam_step([p], [2 * p.copy()], state)
    assert abs(p[0] - x_ref) <= 1e-12
    assert state.t == 2


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())
    with pytest.raises(ShapeError):
        adam_step([np.zeros(2)], [], AdamState())


def test_adam_optimizer_reduces_quadratic():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        backward(ops.sum(ops.square(w)))
        opt.step()
    assert np.all(np.abs(w.data) < 0.05)


# -- losses ---------------------------------------------------------------------

def test_weighted_mse_single_part_is_mse():
    rng = np.random.default_rng(0)
    y, yh = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    assert weighted_mse([(y, yh, 1.0)]).data == pytest.approx(mse(y, yh).data, abs=1e-15)
    assert mse(y, yh).data == pytest.approx(np.mean((y - yh) ** 2), abs=1e-15)


def test_proportional_weights():
    np.testing.assert_allclose(proportional_weights([32, 64]), [1 / 3, 2 / 3], atol=1e-15)
    with pytest.raises(ArgumentError):
        proportional_weights([3, 0])


@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_equal_weights_give_mean_of_mses(k, seed):
    rng = np.random.default_rng(seed)
    parts = [(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), 1.0 / k) for _ in range(k)]
    expected = np.mean([np.mean((y - yh) ** 2) for y, yh, _ in parts])
    assert abs(float(weighted_mse(parts).data) - expected) <= 1e-12


def test_weighted_mse_rejects_bad_weights():
    y = np.zeros(2)
    with pytest.raises(ArgumentError):
        weighted_mse([(y, y, 0.5), (y, y, 0.6)])
    with pytest.raises(ArgumentError):
        weighted_mse([])


def test_masked_mse_counts_only_unmasked():
    y, yh = np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.0, 9.0])
    assert mse(y, yh, np.array([True, True, False])).data == pytest.approx(2.0)
    assert mse(y, yh, np.zeros(3, bool)).data == 0.0
    with pytest.raises(ShapeError):
        mse(np.zeros(2), np.zeros(3))


def test_cross_entropy_cases():
    assert categorical_ce(np.array([0.0, 1.0, 0.0]), 1).data <= 1e-6
    w = np.array([1.0, 2.0])
    assert categorical_ce(np.array([0.25, 0.75]), 1, w).data == pytest.approx(-2 * math.log(0.75))
    zero = float(categorical_ce(np.array([1.0, 0.0]), 1).data)
    assert math.isfinite(zero) and zero == pytest.approx(-math.log(CE_EPSILON))
    with pytest.raises(ShapeError):
        categorical_ce(np.full((2, 2), 0.5), [0])


def test_tensor_grad_shape_matches_values():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    backward(ops.sum(ops.square(x)))
    assert x.grad.shape == x.shape and x.data.size == 6 and x.data.dtype == np.float64
