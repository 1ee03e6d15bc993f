import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sbp.core import (
    Conv1d,
    ContractViolation,
    Dense,
    FreezeViolation,
    LeakyReLU,
    MeanPool,
    Param,
    TrainingDivergence,
    clip_params,
    conv1d_forward,
    cross_entropy,
    dense_forward,
    finite_diff_check,
    leaky_relu,
    log_softmax,
    make_rng,
    rmsprop_step,
    sgd_step,
    softmax,
)

mpmath.mp.dps = 40


def brute_matmul(x, w, b):
    out = [[b[j] for j in range(len(b))] for _ in range(len(x))]
    for i in range(len(x)):
        for j in range(len(b)):
            for k in range(len(w)):
                out[i][j] += x[i][k] * w[k][j]
    return np.array(out)


def brute_conv(x, k, b):
    """Sliding window over an explicitly zero-padded copy of the signal."""
    n, cin, length = x.shape
    cout, _, ks = k.shape
    pad = ks // 2
    out = np.zeros((n, cout, length))
    for s in range(n):
        padded = [[0.0] * pad + list(x[s, c]) + [0.0] * pad for c in range(cin)]
        for o in range(cout):
            for t in range(length):
                acc = b[o]
                for c in range(cin):
                    for j in range(ks):
                        acc += k[o, c, j] * padded[c][t + j]
                out[s, o, t] = acc
    return out


def mp_softmax(z):
    e = [mpmath.e ** mpmath.mpf(v) for v in z]
    tot = sum(e)
    return [float(v / tot) for v in e]


# ------------------------------------------------------------------ rng


def test_rng_same_key_same_stream():
    assert np.array_equal(make_rng(7, 2).standard_normal(5), make_rng(7, 2).standard_normal(5))


def test_rng_streams_differ():
    assert not np.array_equal(make_rng(7, 2).standard_normal(5), make_rng(7, 3).standard_normal(5))


# ------------------------------------------------------------------ dense


def test_dense_identity():
    y = dense_forward(np.array([[1.0, 2.0]]), Param(np.eye(2)), Param([0.0, 0.0]))
    assert np.array_equal(y, [[1.0, 2.0]])


def test_dense_zero_input_passes_bias():
    y = dense_forward(np.zeros((1, 2)), Param([[5.0, -1.0], [2.0, 7.0]]), Param([3.0, 4.0]))
    assert np.array_equal(y, [[3.0, 4.0]])


def test_dense_hand_product_matches_brute_force():
    x, w, b = [[1.0, 1.0]], [[1.0, 2.0], [3.0, 4.0]], [0.0, 0.0]
    y = dense_forward(np.array(x), Param(w), Param(b))
    assert np.array_equal(y, brute_matmul(x, w, b))
    assert np.array_equal(y, [[4.0, 6.0]])


@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_dense_random_matches_brute_force(n, i, o, seed):
    r = np.random.default_rng(seed)
    x, w, b = r.standard_normal((n, i)), r.standard_normal((i, o)), r.standard_normal(o)
    np.testing.assert_allclose(dense_forward(x, Param(w), Param(b)), brute_matmul(x, w, b), rtol=1e-12, atol=1e-12)


def test_dense_shape_mismatch():
    with pytest.raises(ContractViolation):
        dense_forward(np.zeros((1, 3)), Param(np.zeros((2, 2))), Param(np.zeros(2)))


def test_dense_zero_init_without_rng():
    layer = Dense(3, 2)
    assert np.array_equal(layer.forward(np.ones((4, 3))), np.zeros((4, 2)))


# ------------------------------------------------------------------ conv1d


def test_conv_k1_identity():
    x = np.array([[[1.0, -2.0, 3.5]]])
    assert np.array_equal(conv1d_forward(x, Param([[[1.0]]]), Param([0.0])), x)


def test_conv_centered_delta_identity():
    x = np.array([[[1.0, -2.0, 3.5, 0.25]]])
    assert np.array_equal(conv1d_forward(x, Param([[[0.0, 1.0, 0.0]]]), Param([0.0])), x)


def test_conv_box_kernel():
    x = np.array([[[1.0, 2.0, 3.0]]])
    k = np.array([[[1.0, 1.0, 1.0]]])
    y = conv1d_forward(x, Param(k), Param([0.0]))
    assert np.array_equal(y, brute_conv(x, k, [0.0]))
    assert np.array_equal(y, [[[3.0, 6.0, 5.0]]])


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 3, 5]), st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_conv_random_matches_sliding_window(n, cin, cout, ks, length, seed):
    r = np.random.default_rng(seed)
    x, k, b = r.standard_normal((n, cin, length)), r.standard_normal((cout, cin, ks)), r.standard_normal(cout)
    np.testing.assert_allclose(conv1d_forward(x, Param(k), Param(b)), brute_conv(x, k, b), rtol=1e-12, atol=1e-12)


def test_conv_even_kernel_rejected():
    with pytest.raises(ContractViolation):
        conv1d_forward(np.zeros((1, 1, 4)), Param(np.zeros((1, 1, 2))), Param([0.0]))
    with pytest.raises(ContractViolation):
        Conv1d(1, 1, 4)


# ------------------------------------------------------------------ activations


def test_leaky_relu_examples():
    assert np.array_equal(leaky_relu(np.array([1.0, -1.0]), 0.0), [1.0, 0.0])
    assert np.array_equal(leaky_relu(np.array([2.0, -2.0]), 0.2), [2.0, -0.4])
    for s in (0.0, 0.2, 0.9):
        assert leaky_relu(np.array([0.0]), s)[0] == 0.0


def test_leaky_relu_layer_backward_masks():
    layer = LeakyReLU(0.2)
    layer.forward(np.array([[1.0, -1.0]]))
    np.testing.assert_allclose(layer.backward(np.array([[3.0, 3.0]])), [[3.0, 0.6]], rtol=1e-15)


def test_mean_pool_scalar_per_sample():
    x = np.arange(12.0).reshape(2, 2, 3)
    pool = MeanPool()
    assert np.array_equal(pool.forward(x), [2.5, 8.5])
    assert np.allclose(pool.backward(np.array([6.0, 12.0])), np.concatenate([np.full((1, 2, 3), 1.0), np.full((1, 2, 3), 2.0)]))


# ------------------------------------------------------------------ softmax / CE


def test_softmax_examples():
    assert np.array_equal(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    np.testing.assert_allclose(softmax(np.array([1000.0, 1000.0, 1000.0])), [1 / 3] * 3, rtol=0, atol=1e-15)
    np.testing.assert_allclose(softmax(np.array([1.0, 0.0])), mp_softmax([1, 0]), atol=1e-15)
    np.testing.assert_allclose(softmax(np.array([1.0, 0.0])), [0.7311, 0.2689], atol=1e-4)


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(z, c):
    p = softmax(z)
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(softmax(z + c), p, rtol=0, atol=1e-9)


def test_cross_entropy_examples():
    loss, _ = cross_entropy(np.array([0.0, 0.0]), 0)
    assert math.isclose(loss, math.log(2), rel_tol=1e-15)
    loss, _ = cross_entropy(np.array([50.0, 0.0, 0.0]), 0)
    assert 0 < loss < 1e-20
    loss, _ = cross_entropy(np.array([1.0, 0.0]), 1)
    expected = float(-mpmath.log(mpmath.e ** 0 / (mpmath.e ** 1 + 1)))
    assert math.isclose(loss, expected, rel_tol=1e-14)
    assert abs(loss - 1.3133) < 1e-4


@given(arrays(np.float64, st.integers(2, 6), elements=st.floats(-20, 20)), st.data())
def test_cross_entropy_gradient_is_softmax_minus_onehot(z, data):
    t = data.draw(st.integers(0, len(z) - 1))
    _, g = cross_entropy(z, t)
    expected = softmax(z)
    expected[t] -= 1.0
    assert np.array_equal(g, expected)


def test_cross_entropy_batch_mean():
    z = np.array([[0.0, 0.0], [1.0, 0.0]])
    loss, g = cross_entropy(z, np.array([0, 1]))
    assert math.isclose(loss, (math.log(2) + 1.3132616875182228) / 2, rel_tol=1e-14)
    assert g.shape == z.shape


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ContractViolation):
        cross_entropy(np.array([0.0, 0.0]), 2)
    with pytest.raises(ContractViolation):
        cross_entropy(np.array([0.0, 0.0]), -1)


def test_log_softmax_matches_high_precision():
    z = [3.0, -1.0, 0.5]
    tot = mpmath.log(sum(mpmath.e ** mpmath.mpf(v) for v in z))
    np.testing.assert_allclose(log_softmax(np.array(z)), [float(v - tot) for v in z], rtol=1e-14)


# ------------------------------------------------------------------ optimizers


def test_sgd_examples():
    p = Param([1.0])
    p.grad[:] = 1.0
    sgd_step([p], 0.1)
    assert p.value[0] == 0.9 and p.grad[0] == 0.0
    sgd_step([p], 0.1)
    assert p.value[0] == 0.9


def test_sgd_hand_trace_on_square():
    w = Param([1.0])
    for expected in (0.0, 0.0):
        w.grad[:] = 2 * w.value  # d/dw w^2
        sgd_step([w], 0.5)
        assert w.value[0] == expected


def test_sgd_rejects_nonfinite_and_frozen():
    p = Param([1.0])
    p.grad[:] = np.nan
    with pytest.raises(TrainingDivergence):
        sgd_step([p], 0.1)
    q = Param([1.0])
    q.frozen = True
    with pytest.raises(FreezeViolation):
        sgd_step([q], 0.1)


def test_rmsprop_hand_value():
    p = Param([0.0])
    p.grad[:] = 1.0
    rmsprop_step([p], lr=0.01, decay=0.9, eps=0.0)
    expected = float(-mpmath.mpf("0.01") / mpmath.sqrt(mpmath.mpf("0.1")))
    assert math.isclose(p.value[0], expected, rel_tol=1e-14)
    assert abs(p.value[0] + 0.031623) < 1e-6
    assert p.grad[0] == 0.0


def test_rmsprop_zero_grad_decays_state():
    p = Param([2.0])
    p.state["sq"] = np.array([4.0])
    rmsprop_step([p], lr=0.1, decay=0.9, eps=0.0)
    assert p.value[0] == 2.0
    assert p.state["sq"][0] == pytest.approx(3.6)


@given(st.floats(1e-3, 1e3), st.booleans())
def test_rmsprop_first_step_is_scale_free(g, neg):
    g = -g if neg else g
    a, b = Param([0.0]), Param([0.0])
    a.grad[:], b.grad[:] = g, 2 * g
    rmsprop_step([a], 0.01, 0.9, 0.0)
    rmsprop_step([b], 0.01, 0.9, 0.0)
    assert math.isclose(a.value[0], b.value[0], rel_tol=1e-12)


def test_rmsprop_bad_decay_and_divergence():
    p = Param([0.0])
    with pytest.raises(ContractViolation):
        rmsprop_step([p], 0.1, decay=1.0)
    p.grad[:] = np.inf
    with pytest.raises(TrainingDivergence):
        rmsprop_step([p], 0.1)


def test_clip_examples(rng):
    p = Param([0.5, -0.02, 0.005])
    clip_params([p], 0.01)
    assert np.array_equal(p.value, [0.01, -0.01, 0.005])
    q = Param(rng.standard_normal(1000))
    clip_params([q], 0.01)
    assert np.abs(q.value).max() == 0.01
    with pytest.raises(ContractViolation):
        clip_params([q], 0.0)


def test_optimizers_keep_state_shapes():
    p = Param(np.ones((2, 3)))
    p.grad[:] = 0.5
    rmsprop_step([p], 0.01)
    assert p.state["sq"].shape == p.shape and p.grad.shape == p.shape and not p.grad.any()


# ------------------------------------------------------------------ finite differences


def test_finite_diff_square():
    w = Param([3.0])

    def f():
        w.grad += 2 * w.value
        return float(w.value[0] ** 2)

    assert finite_diff_check(f, [w], 1e-5) < 1e-9


def test_finite_diff_dense_softmax_ce_chain(rng):
    layer = Dense(4, 3, rng)
    x = rng.standard_normal((5, 4))
    y = rng.integers(0, 3, 5)

    def f():
        loss, dz = cross_entropy(layer.forward(x), y)
        layer.backward(dz)
        return loss

    assert finite_diff_check(f, layer.params(), 1e-5) < 1e-6


def test_finite_diff_step_range():
    w = Param([1.0])
    with pytest.raises(ContractViolation):
        finite_diff_check(lambda: 0.0, [w], 1e-3)
