import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pantry.errors import ArgumentError, NumericError, ShapeError, StateError
from pantry.tensor import (
    Tape,
    Tensor,
    add,
    avg_pool2d,
    backward,
    conv2d,
    conv_output_size,
    cross_entropy,
    dense,
    flatten,
    global_avg_pool,
    gradient_check,
    max_pool2d,
    mul,
    relu,
    scale,
    softmax,
    tsum,
)
from pantry.tensor import kernels


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ---- conv2d ---------------------------------------------------------------


def test_conv_identity_kernel(backend):
    out = conv2d(t64([[[[5.0]]]]), t64([[[[1.0]]]]), t64([0.0]))
    assert out.shape == (1, 1, 1, 1)
    assert out.data[0, 0, 0, 0] == 5.0


def test_conv_all_ones_3x3(backend):
    out = conv2d(t64(np.ones((1, 1, 3, 3))), t64(np.ones((1, 1, 3, 3))), t64([0.0]))
    assert out.data.ravel().tolist() == [9.0]


def test_conv_stem_shape(backend):
    x = Tensor(np.zeros((1, 3, 224, 224), dtype=np.float32))
    w = Tensor(np.zeros((64, 3, 7, 7), dtype=np.float32))
    assert conv2d(x, w, None, stride=2, padding=3).shape == (1, 64, 112, 112)


def _conv_oracle(x, w, b, stride, pad):
    """Direct nested-loop convolution."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for a in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[a, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[a, o, i, j] = (patch * w[o]).sum() + b[o]
    return out


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (2, 1, 3), (2, 0, 1), (1, 1, 1), (3, 2, 5)])
def test_conv_matches_direct_loop(backend, rng, stride, pad, k):
    x = rng.standard_normal((2, 3, 9, 8))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    out = conv2d(t64(x), t64(w), t64(b), stride=stride, padding=pad)
    np.testing.assert_allclose(out.data, _conv_oracle(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv_errors():
    x = t64(np.ones((1, 2, 4, 4)))
    with pytest.raises(ShapeError, match="channels"):
        conv2d(x, t64(np.ones((1, 3, 3, 3))))
    with pytest.raises(ArgumentError, match="stride"):
        conv2d(x, t64(np.ones((1, 2, 3, 3))), stride=0)
    with pytest.raises(ShapeError, match="larger"):
        conv2d(x, t64(np.ones((1, 2, 5, 5))))


@settings(max_examples=60, deadline=None)
@given(
    size=st.integers(1, 20),
    k=st.integers(1, 7),
    stride=st.integers(1, 4),
    pad=st.integers(0, 3),
)
def test_output_shape_formula(size, k, stride, pad):
    if k > size + 2 * pad:
        return
    x = Tensor(np.ones((1, 1, size, size)))
    expected = (size + 2 * pad - k) // stride + 1
    assert conv2d(x, Tensor(np.ones((1, 1, k, k))), stride=stride, padding=pad).shape[2:] == (expected, expected)
    assert avg_pool2d(x, k, stride, pad).shape[2:] == (expected, expected)
    if pad < k:
        assert max_pool2d(x, k, stride, pad).shape[2:] == (expected, expected)
    assert conv_output_size(size, k, stride, pad) == expected


# ---- pooling --------------------------------------------------------------


def test_max_pool_2x2(backend):
    out = max_pool2d(t64([[[[1, 2], [3, 4]]]]), 2, 2)
    assert out.data.ravel().tolist() == [4.0]


@pytest.mark.parametrize("window", [1, 2, 3])
def test_avg_pool_constant(window):
    out = avg_pool2d(t64(np.full((1, 2, 6, 6), 2.5)), window, 1)
    assert np.all(out.data == 2.5)


def test_max_pool_stem_shape(backend):
    x = Tensor(np.zeros((1, 64, 112, 112), dtype=np.float32))
    assert max_pool2d(x, 3, 2, 1).shape == (1, 64, 56, 56)


def test_global_average_is_full_window_average(rng):
    x = t64(rng.standard_normal((2, 3, 7, 7)))
    np.testing.assert_allclose(global_avg_pool(x).data, avg_pool2d(x, 7, 7).data[:, :, 0, 0])


def test_max_pool_matches_direct_loop(backend, rng):
    x = rng.standard_normal((2, 3, 9, 9))
    out = max_pool2d(t64(x), 3, 2, 1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    for i in range(out.shape[2]):
        for j in range(out.shape[3]):
            np.testing.assert_array_equal(out[:, :, i, j], xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3].max(axis=(2, 3)))


# ---- dense / activations / loss ------------------------------------------


def test_dense_identity():
    x = t64([[1.5, -2.0, 3.0]])
    assert np.array_equal(dense(x, t64(np.eye(3)), t64(np.zeros(3))).data, x.data)


def test_dense_hand_product():
    out = dense(t64([[1, 1]]), t64([[1, 2], [3, 4]]), t64([0, 0]))
    assert out.data.tolist() == [[3.0, 7.0]]


def test_dense_head_width():
    x = Tensor(np.ones((1, 2048), dtype=np.float32))
    assert dense(x, Tensor(np.zeros((32, 2048), dtype=np.float32)), Tensor(np.zeros(32))).shape == (1, 32)


def test_dense_mismatch():
    with pytest.raises(ArgumentError):
        dense(t64([[1, 2, 3]]), t64([[1, 2]]))


def test_relu_values():
    assert relu(t64([-1, 0, 2])).data.tolist() == [0, 0, 2]


def test_softmax_symmetry():
    assert softmax(t64([[0, 0]])).data.tolist() == [[0.5, 0.5]]
    np.testing.assert_allclose(softmax(t64(np.full((1, 32), 3.0))).data, 0.03125, rtol=0, atol=1e-15)


def test_cross_entropy_examples():
    assert cross_entropy(t64([[0, 1, 0]]), np.array([[0, 1, 0]])).item() == 0.0
    uniform = t64(np.full((1, 32), 1 / 32))
    target = np.eye(32)[[5]]
    assert cross_entropy(uniform, target).item() == pytest.approx(math.log(32), abs=1e-12)
    assert math.log(32) == pytest.approx(3.4657, abs=1e-4)
    assert cross_entropy(t64([[0.7, 0.3]]), np.array([[1, 0]])).item() == pytest.approx(-math.log(0.7), abs=1e-12)
    assert -math.log(0.7) == pytest.approx(0.3567, abs=1e-4)


def test_cross_entropy_rejects_non_one_hot():
    with pytest.raises(ArgumentError, match="one-hot"):
        cross_entropy(t64([[0.5, 0.5]]), np.array([[0.5, 0.5]]))
    with pytest.raises(ArgumentError, match="one-hot"):
        cross_entropy(t64([[0.5, 0.5]]), np.array([[1, 1]]))


def test_cross_entropy_confident_wrong_is_finite():
    loss = cross_entropy(t64([[1.0, 0.0]]), np.array([[0, 1]])).item()
    assert loss == pytest.approx(-math.log(1e-12))


finite_rows = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=12)


@settings(max_examples=100, deadline=None)
@given(finite_rows)
def test_relu_nonnegative_idempotent(values):
    x = t64([values])
    r = relu(x)
    assert np.all(r.data >= 0)
    assert np.array_equal(relu(r).data, r.data)


@settings(max_examples=100, deadline=None)
# beyond a logit gap of ~36 the largest entry rounds to exactly 1.0 in float64
@given(st.lists(st.floats(-15, 15, allow_nan=False), min_size=2, max_size=32))
def test_softmax_rows_normalised(values):
    p = softmax(t64([values, values[::-1]])).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((p > 0) & (p < 1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-20, 20, allow_nan=False), min_size=2, max_size=16), st.data())
def test_cross_entropy_nonnegative(values, data):
    k = data.draw(st.integers(0, len(values) - 1))
    p = softmax(t64([values]))
    loss = cross_entropy(p, np.eye(len(values))[[k]]).item()
    assert loss >= 0


# ---- tape / backward -------------------------------------------------------


def test_backward_sum_relu_positive():
    x = t64(np.array([0.5, 1.0, 2.0]), grad=True)
    with Tape():
        loss = tsum(relu(x))
    backward(loss)
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_untaped_raises():
    x = t64([1.0, 2.0])
    with pytest.raises(StateError):
        backward(tsum(x))


def test_backward_clears_tape():
    x = t64([1.0, 2.0], grad=True)
    with Tape() as tape:
        loss = tsum(mul(x, x))
    assert len(tape) == 2
    backward(loss)
    assert len(tape) == 0
    with pytest.raises(StateError):
        backward(loss)


def test_records_are_topological():
    x = t64(np.ones((1, 4)), grad=True)
    w = t64(np.ones((3, 4)), grad=True)
    with Tape() as tape:
        cross_entropy(softmax(dense(x, w)), np.array([[1, 0, 0]]))
    seen = {id(x), id(w)}
    for rec in tape.records:
        assert all(id(t) in seen for t in rec.inputs)
        seen.add(id(rec.output))


def test_softmax_cross_entropy_gradient_identity(rng):
    logits = t64(rng.standard_normal((4, 6)), grad=True)
    targets = np.eye(6)[[0, 3, 5, 1]]
    with Tape():
        p = softmax(logits)
        loss = cross_entropy(p, targets)
    backward(loss)
    np.testing.assert_allclose(logits.grad, (p.data - targets) / 4, atol=1e-12)


def test_backward_is_linear(rng):
    w = t64(rng.standard_normal((3, 5)), grad=True)
    x = t64(rng.standard_normal((2, 5)))
    t1, t2 = np.eye(3)[[0, 2]], np.eye(3)[[1, 1]]

    def grad_of(fn):
        with Tape():
            loss = fn()
        backward(loss)
        return w.grad.copy()

    g1 = grad_of(lambda: cross_entropy(softmax(dense(x, w)), t1))
    g2 = grad_of(lambda: tsum(relu(dense(x, w))))
    a, b = 0.7, -2.5
    g12 = grad_of(lambda: add(scale(cross_entropy(softmax(dense(x, w)), t1), a), scale(tsum(relu(dense(x, w))), b)))
    np.testing.assert_allclose(g12, a * g1 + b * g2, atol=1e-12)


def test_frozen_input_gets_no_grad(rng):
    w = t64(rng.standard_normal((2, 3)))
    x = t64(rng.standard_normal((1, 3)), grad=True)
    with Tape():
        loss = tsum(dense(x, w))
    backward(loss)
    assert w.grad is None
    assert x.grad is not None


def test_nan_is_an_error():
    with pytest.raises(NumericError):
        relu(t64([np.nan, 1.0]))


def test_no_recording_without_tape():
    x = t64([1.0], grad=True)
    y = tsum(x)
    assert not y.requires_grad


# ---- gradient checks -------------------------------------------------------


def test_gradcheck_quadratic():
    x = t64([0.3, -1.2, 2.0, 5.0])
    report = gradient_check(lambda: scale(tsum(mul(x, x)), 0.5), [x], tolerance=1e-8)
    assert report.passed, report


def test_gradcheck_dense(rng):
    x = t64(rng.standard_normal((3, 4)))
    w = t64(rng.standard_normal((5, 4)))
    b = t64(rng.standard_normal(5))
    r = t64(rng.standard_normal((3, 5)))
    report = gradient_check(lambda: tsum(mul(dense(x, w, b), r)), [x, w, b], tolerance=1e-4)
    assert report.passed, report


def test_gradcheck_negative_control(rng):
    x = t64(rng.standard_normal((2, 3)))
    w = t64(rng.standard_normal((2, 3)))
    report = gradient_check(
        lambda: tsum(mul(dense(x, w), dense(x, w))), [w], tolerance=1e-4,
        analytic_override=lambda i, g: g * 1.1,
    )
    assert not report.passed


def test_gradcheck_rejects_non_scalar():
    x = t64([1.0, 2.0])
    with pytest.raises(ArgumentError):
        gradient_check(lambda: relu(x), [x])


def test_gradcheck_requires_float64():
    x = Tensor(np.ones(2, dtype=np.float32))
    with pytest.raises(ArgumentError):
        gradient_check(lambda: tsum(x), [x])


def _weighted(y, r):
    return tsum(mul(y, r))


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 1)])
def test_gradcheck_conv(backend, rng, stride, pad):
    x = t64(rng.standard_normal((2, 2, 6, 5)))
    w = t64(rng.standard_normal((3, 2, 3, 3)))
    b = t64(rng.standard_normal(3))
    shape = conv2d(x, w, b, stride, pad).shape
    r = t64(rng.standard_normal(shape))
    report = gradient_check(lambda: _weighted(conv2d(x, w, b, stride, pad), r), [x, w, b])
    assert report.passed, report


def test_gradcheck_conv_1x1_strided(backend, rng):
    x = t64(rng.standard_normal((2, 3, 5, 5)))
    w = t64(rng.standard_normal((4, 3, 1, 1)))
    r = t64(rng.standard_normal((2, 4, 3, 3)))
    report = gradient_check(lambda: _weighted(conv2d(x, w, None, 2, 0), r), [x, w])
    assert report.passed, report


def test_gradcheck_max_pool(backend, rng):
    x = t64(rng.permutation(2 * 2 * 7 * 7).reshape(2, 2, 7, 7) / 10.0)
    r = t64(rng.standard_normal(max_pool2d(x, 3, 2, 1).shape))
    report = gradient_check(lambda: _weighted(max_pool2d(x, 3, 2, 1), r), [x])
    assert report.passed, report


def test_gradcheck_avg_pools(rng):
    x = t64(rng.standard_normal((2, 3, 6, 6)))
    r = t64(rng.standard_normal(avg_pool2d(x, 3, 2, 1).shape))
    assert gradient_check(lambda: _weighted(avg_pool2d(x, 3, 2, 1), r), [x]).passed
    r2 = t64(rng.standard_normal((2, 3)))
    assert gradient_check(lambda: _weighted(global_avg_pool(x), r2), [x]).passed


def test_gradcheck_relu_flatten(rng):
    x = t64(rng.standard_normal((2, 3, 2, 2)))
    r = t64(rng.standard_normal((2, 12)))
    assert gradient_check(lambda: _weighted(flatten(relu(x)), r), [x]).passed


def test_gradcheck_softmax_cross_entropy(rng):
    z = t64(rng.standard_normal((4, 5)))
    targets = np.eye(5)[[1, 0, 4, 2]]
    assert gradient_check(lambda: cross_entropy(softmax(z), targets), [z]).passed
