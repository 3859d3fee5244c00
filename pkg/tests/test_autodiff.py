"""Autodiff: frozen-value oracles and finite-difference gradient checks."""

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

import ttanav.autodiff as ad
from ttanav.autodiff import Tensor


def t64(a, rg=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=rg)


# -- frozen forward values -----------------------------------------------------

def test_conv2d_all_ones_counts_window():
    x = t64(np.ones((1, 1, 5, 5)))
    w = t64(np.ones((1, 1, 3, 3)))
    b = t64(np.zeros(1))
    y = ad.conv2d(x, w, b, stride=1, pad=0)
    assert y.data.shape == (1, 1, 3, 3)
    np.testing.assert_allclose(y.data, 9.0)


def test_conv2d_matches_scipy_correlate():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    y = ad.conv2d(t64(x), t64(w), t64(b), stride=1, pad=1).data
    from scipy.ndimage import correlate

    for n in range(2):
        for co in range(4):
            acc = np.zeros((8, 8))
            for ci in range(3):
                acc += correlate(x[n, ci], w[co, ci], mode="constant", cval=0.0)
            np.testing.assert_allclose(y[n, co], acc + b[co], atol=1e-10)


def test_conv2d_stride_pad_shapes():
    x = t64(np.ones((1, 2, 64, 64)))
    w = t64(np.ones((5, 2, 4, 4)))
    b = t64(np.zeros(5))
    assert ad.conv2d(x, w, b, stride=2, pad=1).data.shape == (1, 5, 32, 32)
    with pytest.raises(ValueError, match="non-integral"):
        ad.conv2d(x, t64(np.ones((5, 2, 3, 3))), b, stride=2, pad=1)


def test_dense_known_values():
    x = t64([[1.0, 2.0]])
    w = t64([[1.0, -1.0], [1.5, 0.0]])  # (in, out)
    b = t64([0.0, 1.0])
    y = ad.dense(x, w, b)
    np.testing.assert_allclose(y.data, [[4.0, 0.0]])


def test_sigmoid_center_and_derivative():
    x = t64([0.0])
    y = ad.sigmoid(x)
    assert y.data[0] == 0.5
    y.backward(np.ones(1))
    np.testing.assert_allclose(x.grad, [0.25])


def test_sigmoid_saturates_without_overflow():
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        y = ad.sigmoid(Tensor(np.array([-1e9, 1e9, -88.0, 88.0], dtype=np.float32)))
    assert y.data[0] == 0.0 and y.data[1] == 1.0
    assert y.data.dtype == np.float32


def test_entropy_uniform_is_log4():
    logits = t64(np.zeros((3, 4)))
    h = ad.entropy(logits)
    np.testing.assert_allclose(h.data, np.log(4.0), rtol=1e-12)


def test_entropy_matches_scipy():
    rng = np.random.default_rng(11)
    z = rng.normal(size=(6, 5)) * 3
    h = ad.entropy(t64(z)).data
    p = scipy.special.softmax(z, axis=1)
    expect = np.mean([scipy.stats.entropy(row) for row in p])
    np.testing.assert_allclose(h, expect, rtol=1e-12)


def test_cross_entropy_matches_log_softmax():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(7, 4))
    labels = rng.integers(0, 4, size=7)
    got = ad.cross_entropy(t64(z), labels).data
    logp = z - scipy.special.logsumexp(z, axis=1, keepdims=True)
    expect = -np.mean(logp[np.arange(7), labels])
    np.testing.assert_allclose(got, expect, rtol=1e-12)


def test_mse_loss_known():
    a = t64([[1.0, 2.0], [3.0, 4.0]])
    b = t64([[1.0, 0.0], [0.0, 4.0]])
    np.testing.assert_allclose(ad.mse_loss(a, b).data, (4.0 + 9.0) / 4.0)


def test_softmax_rows_are_distributions():
    rng = np.random.default_rng(0)
    p = ad.softmax(t64(rng.normal(size=(10, 6)) * 50)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)


def test_upsample2_nearest_values():
    x = t64(np.arange(4.0).reshape(1, 1, 2, 2))
    y = ad.upsample2_nearest(x)
    np.testing.assert_array_equal(
        y.data[0, 0], [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])


def test_gather_rows_forward_and_grad():
    x = t64(np.arange(12.0).reshape(4, 3))
    y = ad.gather_rows(x, np.array([0, 2, 2]))
    np.testing.assert_array_equal(y.data, [[0, 1, 2], [6, 7, 8], [6, 7, 8]])
    ad.sum_all(y).backward()
    np.testing.assert_array_equal(x.grad, [[1, 1, 1], [0, 0, 0], [2, 2, 2], [0, 0, 0]])


def test_global_avg_pool():
    x = t64(np.arange(8.0).reshape(1, 2, 2, 2))
    np.testing.assert_allclose(ad.global_avg_pool(x).data, [[1.5, 5.5]])


# -- graph mechanics -----------------------------------------------------------

def test_diamond_graph_accumulates():
    x = t64([3.0])
    y = ad.add(ad.mul(x, x), x)  # x^2 + x -> dy/dx = 2x + 1
    y.backward(np.ones(1))
    np.testing.assert_allclose(x.grad, [7.0])


def test_reused_node_in_two_branches():
    x = t64([2.0])
    a = ad.scale(x, 3.0)
    out = ad.add(ad.mul(a, a), ad.scale(a, 2.0))  # 9x^2 + 6x -> 36x + 6... at x=2: 42
    out.backward(np.ones(1))
    np.testing.assert_allclose(x.grad, [42.0])


def test_backward_needs_scalar_or_seed():
    x = t64(np.ones((2, 2)))
    y = ad.relu(x)
    with pytest.raises(ValueError, match="non-scalar"):
        y.backward()


def test_no_grad_suppresses_graph():
    x = t64([1.0])
    with ad.no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad and y._parents == ()


def test_detach_cuts_graph():
    x = t64([2.0])
    y = ad.mul(x, x).detach()
    z = ad.mul(y, y)
    z.backward(np.ones(1))
    assert x.grad is None


def test_dtype_preserved():
    for dt in (np.float32, np.float64):
        x = Tensor(np.ones((2, 3), dtype=dt), requires_grad=True)
        assert ad.relu(x).dtype == dt
        assert ad.sigmoid(x).dtype == dt
        assert ad.softmax(x).dtype == dt


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
def test_broadcast_backward_matches_manual_sum(n, m, k):
    rng = np.random.default_rng(n * 100 + m * 10 + k)
    a = t64(rng.normal(size=(n, 1, k)))
    b = t64(rng.normal(size=(m, 1)))
    out = ad.mul(a, b)
    g = rng.normal(size=out.data.shape)
    out.backward(g)
    np.testing.assert_allclose(a.grad, (g * b.data).sum(axis=1, keepdims=True), atol=1e-12)
    np.testing.assert_allclose(b.grad, (g * a.data).sum(axis=(0, 2))[:, None], atol=1e-12)


# -- finite-difference gradient checks ------------------------------------------

def _check(fn, tensors, tol=1e-4):
    report = ad.grad_check(fn, tensors, tol=tol)
    assert report.max_rel_err < tol, report


N_INSTANCES = 20


def test_grad_conv2d_many():
    rng = np.random.default_rng(21)
    for i in range(N_INSTANCES):
        n, ci, co = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
        k = int(rng.choice([1, 3, 4]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, 2))
        h = stride * int(rng.integers(2, 4)) + k - 2 * pad
        x = t64(rng.normal(size=(n, ci, h, h)))
        w = t64(rng.normal(size=(co, ci, k, k)) * 0.5)
        b = t64(rng.normal(size=co))
        _check(lambda x, w, b: ad.sum_all(ad.conv2d(x, w, b, stride, pad)), [x, w, b])


def test_grad_dense_many():
    rng = np.random.default_rng(22)
    for i in range(N_INSTANCES):
        n, din, dout = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 6)
        x = t64(rng.normal(size=(n, din)))
        w = t64(rng.normal(size=(din, dout)))
        b = t64(rng.normal(size=dout))
        _check(lambda x, w, b: ad.mean(ad.dense(x, w, b)), [x, w, b])


def test_grad_entropy_many():
    rng = np.random.default_rng(23)
    for i in range(N_INSTANCES):
        z = t64(rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(2, 6)))) * 2)
        _check(lambda z: ad.entropy(z), [z])


def test_grad_mse_many():
    rng = np.random.default_rng(24)
    for i in range(N_INSTANCES):
        shape = tuple(rng.integers(1, 4, size=int(rng.integers(1, 4))))
        a = t64(rng.normal(size=shape))
        b = t64(rng.normal(size=shape))
        _check(lambda a, b: ad.mse_loss(a, b), [a, b])


def test_grad_cross_entropy_many():
    rng = np.random.default_rng(25)
    for i in range(N_INSTANCES):
        n, a = int(rng.integers(1, 6)), int(rng.integers(2, 5))
        z = t64(rng.normal(size=(n, a)))
        labels = rng.integers(0, a, size=n)
        _check(lambda z: ad.cross_entropy(z, labels), [z])


def test_grad_elementwise_many():
    rng = np.random.default_rng(26)
    unary = [ad.relu, ad.sigmoid, ad.tanh, ad.exp]
    for i in range(N_INSTANCES):
        x = t64(rng.normal(size=(3, 4)) * 0.8 + 0.05)
        fn = unary[i % len(unary)]
        if fn is ad.relu:
            x.data[np.abs(x.data) < 0.05] += 0.1  # keep away from the kink
        _check(lambda x, fn=fn: ad.sum_all(fn(x)), [x])
    for i in range(N_INSTANCES):
        x = t64(rng.uniform(0.2, 3.0, size=(2, 5)))
        _check(lambda x: ad.sum_all(ad.log(x)), [x])


def test_grad_binary_and_shape_ops():
    rng = np.random.default_rng(27)
    for i in range(N_INSTANCES):
        a = t64(rng.normal(size=(2, 3)))
        b = t64(rng.normal(size=(2, 3)))
        _check(lambda a, b: ad.sum_all(ad.mul(ad.add(a, b), ad.sub(a, b))), [a, b])
    a = t64(rng.normal(size=(2, 3, 4, 4)))
    _check(lambda a: ad.sum_all(ad.global_avg_pool(a)), [a])
    a = t64(rng.normal(size=(1, 2, 3, 3)))
    _check(lambda a: ad.sum_all(ad.upsample2_nearest(a)), [a])
    a = t64(rng.normal(size=(2, 6)))
    _check(lambda a: ad.sum_all(ad.reshape(a, (3, 4))), [a])
    a = t64(rng.normal(size=(4, 3)))
    b = t64(rng.normal(size=(3, 5)))
    _check(lambda a, b: ad.sum_all(ad.matmul(a, b)), [a, b])
    a = t64(rng.normal(size=(5, 3)))
    _check(lambda a: ad.sum_all(ad.gather_rows(a, np.array([0, 4, 2, 2]))), [a])
    a = t64(rng.normal(size=(2, 3)))
    b = t64(rng.normal(size=(2, 2)))
    _check(lambda a, b: ad.sum_all(ad.concat([a, b], axis=1)), [a, b])
    a = t64(rng.normal(size=(3, 2)))
    _check(lambda a: ad.sum_all(ad.softmax(a)), [a])


def test_assert_finite():
    ad.assert_finite(t64([1.0, 2.0]))
    with pytest.raises(FloatingPointError):
        ad.assert_finite(Tensor(np.array([1.0, np.nan])), "probe")
