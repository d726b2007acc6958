import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hass import autodiff as ad
from hass.autodiff import Tensor

import oracles


def T(x):
    return Tensor(np.asarray(x, dtype=float))


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    M = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ad.matmul(T(np.eye(2)), T(M)).data, M)


def test_matmul_hand_case():
    out = ad.matmul(T([[1, 2], [3, 4]]), T([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_matmul_zero_annihilates(rng):
    out = ad.matmul(T(np.zeros((3, 4))), T(rng.standard_normal((4, 2))))
    np.testing.assert_array_equal(out.data, np.zeros((3, 2)))


def test_matmul_shape_error_names_both():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(T(np.zeros((2, 3))), T(np.zeros((2, 3))))


def test_matmul_backward_rules(rng):
    A, B = T(rng.standard_normal((3, 4))), T(rng.standard_normal((4, 2)))
    G = rng.standard_normal((3, 2))
    loss = ad.sum(ad.mul(ad.matmul(A, B), T(G)))
    g = ad.backward(loss, [A, B])
    np.testing.assert_allclose(g[A], G @ B.data.T, rtol=1e-12)
    np.testing.assert_allclose(g[B], A.data.T @ G, rtol=1e-12)


def test_matmul_associative(rng):
    for _ in range(20):
        A, B, C = (T(rng.standard_normal((4, 4))) for _ in range(3))
        left = ad.matmul(ad.matmul(A, B), C).data
        right = ad.matmul(A, ad.matmul(B, C)).data
        np.testing.assert_allclose(left, right, atol=1e-9, rtol=0)


# ---------------------------------------------------------------- bias


def test_bias_on_zeros():
    out = ad.add_bias_broadcast(T(np.zeros((2, 3))), T([1, 2]))
    np.testing.assert_array_equal(out.data, [[1, 1, 1], [2, 2, 2]])


def test_zero_bias_is_identity(rng):
    x = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(ad.add_bias_broadcast(T(x), T(np.zeros(3))).data, x)


def test_bias_hand_case():
    out = ad.add_bias_broadcast(T([[1, 1], [1, 1]]), T([0.5, -0.5]))
    np.testing.assert_array_equal(out.data, [[1.5, 1.5], [0.5, 0.5]])


def test_bias_gradient_sums_columns(rng):
    x, b = T(rng.standard_normal((3, 4))), T(np.zeros(3))
    G = rng.standard_normal((3, 4))
    g = ad.backward(ad.sum(ad.mul(ad.add_bias_broadcast(x, b), T(G))), [b])
    np.testing.assert_allclose(g[b], G.sum(axis=1))


def test_bias_shape_mismatch():
    with pytest.raises(ValueError):
        ad.add_bias_broadcast(T(np.zeros((2, 3))), T([1, 2, 3]))


# ---------------------------------------------------------------- softmax


def test_softmax_uniform_row():
    np.testing.assert_allclose(ad.softmax_rows(T(np.zeros((1, 4)))).data, [[0.25] * 4])


def test_softmax_single_element():
    assert ad.softmax_rows(T([[3.7]])).data.tolist() == [[1.0]]


def test_softmax_log_ratio():
    out = ad.softmax_rows(T([[math.log(1), math.log(3)]])).data
    np.testing.assert_allclose(out, [[0.25, 0.75]], atol=1e-15)
    np.testing.assert_allclose(out[0], oracles.softmax_row([0.0, math.log(3)]), atol=1e-15)


def test_softmax_is_stable_for_large_inputs():
    out = ad.softmax_rows(T([[1000.0, 1000.0, -1000.0]])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [[0.5, 0.5, 0.0]])


finite_rows = hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=8),
                         elements=st.floats(-30, 30))


@given(finite_rows, st.floats(-50, 50))
def test_softmax_rows_stochastic_and_shift_invariant(x, c):
    y = ad.softmax_rows(T(x)).data
    assert np.all(np.abs(y.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(y > 0)
    if y.shape[1] > 1:
        # an exact 1.0 is only possible once the runner-up trails by 53 ln 2 (float64 resolution)
        top2 = np.sort(x, axis=1)[:, -2:]
        saturated = np.any(y >= 1, axis=1)
        assert np.all(top2[saturated, 1] - top2[saturated, 0] >= 53 * np.log(2.0) - 1e-9)
    np.testing.assert_allclose(ad.softmax_rows(T(x + c)).data, y, atol=1e-12, rtol=0)


# ---------------------------------------------------------------- relu


def test_relu_examples():
    assert ad.relu(T([-1, 0, 2])).data.tolist() == [0, 0, 2]
    assert ad.relu(T([-3.0, -0.1])).data.tolist() == [0, 0]
    assert ad.relu(T([0.5, -0.5, 3.25])).data.tolist() == [0.5, 0, 3.25]


def test_relu_subgradient_at_zero_is_zero():
    x = T([-1.0, 0.0, 2.0])
    g = ad.backward(ad.sum(ad.relu(x)), [x])
    assert g[x].tolist() == [0.0, 0.0, 1.0]


# ---------------------------------------------------------------- layer norm


def test_layer_norm_constant_vector():
    out = ad.layer_norm(T([2.5] * 4), T(np.ones(4)), T(np.zeros(4))).data
    np.testing.assert_allclose(out, 0.0, atol=1e-4)


def test_layer_norm_fixed_point():
    out = ad.layer_norm(T([-1.0, 1.0]), T(np.ones(2)), T(np.zeros(2)), eps=1e-14).data
    np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-12)


def test_layer_norm_hand_case():
    out = ad.layer_norm(T([1.0, 2.0, 3.0]), T(np.ones(3)), T(np.zeros(3)), eps=1e-5).data
    expected = oracles.layer_norm_vec([1.0, 2.0, 3.0], [1] * 3, [0] * 3, 1e-5)
    np.testing.assert_allclose(out, expected, rtol=1e-14)
    np.testing.assert_allclose(out, [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_layer_norm_is_column_wise_in_2d(rng):
    X = rng.standard_normal((5, 3))
    gain, bias = rng.standard_normal(5), rng.standard_normal(5)
    out = ad.layer_norm(T(X), T(gain), T(bias), eps=1e-5).data
    np.testing.assert_allclose(out, oracles.layer_norm_cols(X, gain, bias, 1e-5), rtol=1e-12, atol=1e-13)


@given(hnp.arrays(np.float64, st.integers(2, 16), elements=st.floats(-100, 100)))
def test_layer_norm_moments(x):
    if x.var() < 1e-2:
        return
    y = ad.layer_norm(T(x), T(np.ones(len(x))), T(np.zeros(len(x))), eps=1e-12).data
    assert abs(y.mean()) <= 1e-10
    assert abs(y.var() - 1.0) <= 1e-6


def test_layer_norm_rejects_bad_eps():
    with pytest.raises(ValueError):
        ad.layer_norm(T([1.0, 2.0]), T([1, 1]), T([0, 0]), eps=0.0)


# ---------------------------------------------------------------- backward


def test_backward_sum_is_ones(rng):
    x = T(rng.standard_normal((3, 2)))
    np.testing.assert_array_equal(ad.backward(ad.sum(x), [x])[x], np.ones((3, 2)))


def test_backward_square():
    x = T([1.0, 2.0])
    assert ad.backward(ad.sum(ad.mul(x, x)), [x])[x].tolist() == [2.0, 4.0]


def test_backward_requires_recorded_output():
    with pytest.raises(ad.GradientError):
        ad.backward(T(3.0), [])
    x = T([1.0, 2.0])
    with pytest.raises(ad.GradientError):
        ad.backward(ad.scale(x, 2.0), [x])
    with ad.no_grad():
        y = ad.sum(x)
    with pytest.raises(ad.GradientError):
        ad.backward(y, [x])


def test_backward_is_repeatable(rng):
    x = T(rng.standard_normal(4))
    loss = ad.sum(ad.mul(x, x))
    first = ad.backward(loss, [x])[x].copy()
    np.testing.assert_array_equal(ad.backward(loss, [x])[x], first)


def test_unused_param_gets_zero(rng):
    x, z = T(rng.standard_normal(3)), T(rng.standard_normal(2))
    assert ad.backward(ad.sum(x), [z])[z].tolist() == [0.0, 0.0]


# every op's backward against central differences, 50 random coordinates, shapes up to 8x8

def _shape(rng, lo=1, hi=8):
    return int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))


def _op_cases(rng):
    p, q = _shape(rng)
    r = int(rng.integers(1, 9))
    w = rng.standard_normal((p, r))
    yield "matmul", [rng.standard_normal((p, q)), rng.standard_normal((q, r))], \
        lambda a, b: ad.matmul(a, b), w
    yield "add_bias", [rng.standard_normal((p, q)), rng.standard_normal(p)], \
        lambda a, b: ad.add_bias_broadcast(a, b), rng.standard_normal((p, q))
    yield "softmax", [rng.standard_normal((p, q))], ad.softmax_rows, rng.standard_normal((p, q))
    # keep inputs away from the kink
    x = rng.standard_normal((p, q))
    x = np.where(np.abs(x) < 0.05, 0.5, x)
    yield "relu", [x], ad.relu, rng.standard_normal((p, q))
    d = max(p, 2)
    yield "layer_norm", [rng.standard_normal((d, q)), rng.standard_normal(d), rng.standard_normal(d)], \
        lambda a, g, b: ad.layer_norm(a, g, b), rng.standard_normal((d, q))
    yield "layer_norm_1d", [rng.standard_normal(d), rng.standard_normal(d), rng.standard_normal(d)], \
        lambda a, g, b: ad.layer_norm(a, g, b), rng.standard_normal(d)
    yield "transpose", [rng.standard_normal((p, q))], ad.transpose, rng.standard_normal((q, p))
    yield "reshape", [rng.standard_normal((p, q))], lambda a: ad.reshape(a, (q, p)), rng.standard_normal((q, p))
    yield "concat", [rng.standard_normal((p, q)), rng.standard_normal((2, q))], \
        lambda a, b: ad.concat([a, b], axis=-2), rng.standard_normal((p + 2, q))
    k = int(rng.integers(1, q + 1))
    yield "sliding_windows", [rng.standard_normal((p, q))], lambda a: ad.sliding_windows(a, k), \
        rng.standard_normal((p * k, q - k + 1))
    yield "mean_last", [rng.standard_normal((p, q))], ad.mean_last, rng.standard_normal(p)
    yield "mul", [rng.standard_normal((p, q)), rng.standard_normal((p, q))], ad.mul, rng.standard_normal((p, q))
    labels = rng.integers(0, q, size=p)
    yield "cross_entropy", [rng.standard_normal((p, q))], lambda a: ad.cross_entropy(a, labels), None


@pytest.mark.parametrize("trial", range(3))
def test_every_op_matches_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    for name, inputs, op, weight in _op_cases(rng):
        tensors = [T(x) for x in inputs]

        def loss():
            out = op(*tensors)
            return out if weight is None else ad.sum(ad.mul(out, T(weight)))

        grads = ad.backward(loss(), tensors)
        for t in tensors:
            flat = t.data.reshape(-1)
            coords = rng.choice(flat.size, size=min(50, flat.size), replace=False)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + 1e-4
                plus = loss().item()
                flat[i] = orig - 1e-4
                minus = loss().item()
                flat[i] = orig
                num = (plus - minus) / 2e-4
                ana = grads[t].reshape(-1)[i]
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-3)
                assert err <= 1e-5, f"{name}: coord {i} analytic {ana} numeric {num}"


def test_batched_matmul_sums_parameter_gradient(rng):
    W = T(rng.standard_normal((2, 3)))
    X = T(rng.standard_normal((4, 3, 5)))
    G = rng.standard_normal((4, 2, 5))
    g = ad.backward(ad.sum(ad.mul(ad.matmul(W, X), T(G))), [W])
    expected = sum(G[b] @ X.data[b].T for b in range(4))
    np.testing.assert_allclose(g[W], expected, rtol=1e-12)


def test_tensor_rejects_empty_extent():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


@settings(max_examples=25)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                  elements=st.floats(-1e3, 1e3)))
def test_ops_stay_finite(x):
    d = x.shape[0]
    out = ad.layer_norm(ad.softmax_rows(T(x)), T(np.ones(d)), T(np.zeros(d)))
    assert np.all(np.isfinite(out.data))
