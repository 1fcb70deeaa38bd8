import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chsnet import functional as F
from chsnet.errors import ConfigurationError, ShapeError
from chsnet.gradcheck import TOLERANCE, check, op_cases
from chsnet.tensor import Tensor


def loop_conv(X, W, b, s, p):
    """Direct six-loop cross-correlation on a single (w, h, d) image."""
    f, _, d, r = W.shape
    Xp = np.pad(X, ((p, p), (p, p), (0, 0)))
    ow = (X.shape[0] + 2 * p - f) // s + 1
    oh = (X.shape[1] + 2 * p - f) // s + 1
    out = np.zeros((ow, oh, r))
    for i in range(ow):
        for j in range(oh):
            for q in range(r):
                out[i, j, q] = np.sum(Xp[i * s:i * s + f, j * s:j * s + f, :] * W[:, :, :, q])
    return out + (0 if b is None else b)


@given(
    w=st.integers(3, 9), h=st.integers(3, 9), d=st.integers(1, 3), r=st.integers(1, 3),
    f=st.sampled_from([1, 2, 3]), s=st.integers(1, 2), p=st.integers(0, 1), seed=st.integers(0, 999),
)
def test_conv2d_matches_loops(w, h, d, r, f, s, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(w, h, d))
    W = rng.normal(size=(f, f, d, r))
    b = rng.normal(size=r)
    out = F.conv2d(Tensor(X), Tensor(W), Tensor(b), stride=s, padding=p).data
    np.testing.assert_allclose(out, loop_conv(X, W, b, s, p), atol=1e-12)


@given(w=st.integers(3, 8), d=st.integers(1, 4), f=st.sampled_from([1, 3]), s=st.integers(1, 2), seed=st.integers(0, 999))
def test_depthwise_is_per_channel_conv(w, d, f, s, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(2, w, w, d))
    W = rng.normal(size=(f, f, d))
    p = f // 2
    out = F.depthwise_conv2d(Tensor(X), Tensor(W), stride=s, padding=p).data
    for b in range(2):
        for c in range(d):
            ref = loop_conv(X[b, :, :, c:c + 1], W[:, :, c:c + 1, None], None, s, p)
            np.testing.assert_allclose(out[b, :, :, c], ref[:, :, 0], atol=1e-12)


@given(n=st.integers(1, 64), f=st.integers(1, 7), p=st.integers(0, 3), s=st.integers(1, 3))
def test_conv_output_size_counts_window_positions(n, f, p, s):
    if n + 2 * p < f:
        return
    positions = len(range(0, n + 2 * p - f + 1, s))
    assert F.conv_output_size(n, f, p, s) == positions


@given(seed=st.integers(0, 999), f=st.sampled_from([2, 3]), s=st.sampled_from([1, 2]))
def test_transposed_conv_is_adjoint_of_conv(seed, f, s):
    # <conv(x), y> == <x, tconv(y)> with matching taps on the uncropped region
    rng = np.random.default_rng(seed)
    w = 4
    Y = rng.normal(size=(w, w, 2))
    W = rng.normal(size=(f, f, 2, 3))  # tconv maps 2 -> 3 channels
    up = F.transposed_conv2d(Tensor(Y), Tensor(W), stride=s).data
    assert up.shape == (s * w, s * w, 3)
    # adjoint check on the full (uncropped) output, padded so the crop is exact
    big = (w - 1) * s + f
    X = np.zeros((big, big, 3))
    X[: s * w, : s * w] = rng.normal(size=(s * w, s * w, 3))
    Wt = np.transpose(W, (0, 1, 3, 2))
    conv = F.conv2d(Tensor(X), Tensor(Wt), stride=s).data
    lhs = np.sum(conv * Y)
    rhs = np.sum(X[: s * w, : s * w] * up)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_transposed_conv_rejects_other_strides():
    with pytest.raises(ConfigurationError):
        F.transposed_conv2d(Tensor(np.ones((2, 2, 1))), Tensor(np.ones((2, 2, 1, 1))), stride=3)


def test_conv_depth_mismatch():
    with pytest.raises(ShapeError):
        F.conv2d(Tensor(np.ones((4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))


@given(seed=st.integers(0, 999), c=st.integers(1, 4))
def test_batch_norm_training_standardizes(seed, c):
    rng = np.random.default_rng(seed)
    x = rng.normal(3.0, 2.0, size=(4, 5, 5, c))
    rm, rv = np.zeros(c), np.ones(c)
    out = F.batch_norm(Tensor(x), Tensor(np.ones(c)), Tensor(np.zeros(c)), rm, rv, training=True, eps=0.0).data
    flat = out.reshape(-1, c)
    np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(flat.var(axis=0), 1, atol=1e-6)
    np.testing.assert_allclose(rm, 0.1 * x.reshape(-1, c).mean(axis=0))


def test_batch_norm_constant_channel_maps_to_beta():
    x = np.full((2, 3, 3, 1), 4.2)
    out = F.batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.array([0.7])), np.zeros(1), np.ones(1), True).data
    np.testing.assert_allclose(out, 0.7)


def test_batch_norm_infer_uses_running_statistics():
    x = np.arange(8.0).reshape(1, 2, 2, 2)
    rm, rv = np.array([1.0, 2.0]), np.array([4.0, 9.0])
    out = F.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm.copy(), rv.copy(), False, eps=0.0).data
    np.testing.assert_allclose(out, (x - rm) / np.sqrt(rv))


def loop_max_pool(X, k, s):
    ow = (X.shape[0] - k) // s + 1
    oh = (X.shape[1] - k) // s + 1
    out = np.empty((ow, oh, X.shape[2]))
    for i in range(ow):
        for j in range(oh):
            out[i, j] = X[i * s:i * s + k, j * s:j * s + k].max(axis=(0, 1))
    return out


@given(w=st.integers(2, 9), h=st.integers(2, 9), k=st.integers(1, 3), s=st.integers(1, 3), seed=st.integers(0, 999))
def test_max_pool_matches_loops(w, h, k, s, seed):
    if k > min(w, h):
        return
    X = np.random.default_rng(seed).normal(size=(w, h, 2))
    np.testing.assert_array_equal(F.max_pool2d(Tensor(X), k, s).data, loop_max_pool(X, k, s))


def test_same_max_pool_keeps_extent():
    X = np.random.default_rng(0).normal(size=(7, 5, 3))
    out = F.max_pool2d(Tensor(X), 3, 1, "same").data
    assert out.shape == X.shape
    assert np.all(out >= X)


def test_max_pool_gradient_goes_to_first_maximum():
    x = Tensor(np.ones((2, 2, 1)), requires_grad=True)
    from chsnet.tensor import Tape

    with Tape() as tape:
        y = F.sum(F.max_pool2d(x, 2, 2))
    tape.backward(y, [x])
    np.testing.assert_array_equal(x.grad[:, :, 0], [[1, 0], [0, 0]])


def test_global_max_pool_and_upsample():
    X = np.random.default_rng(0).normal(size=(3, 4, 4, 2))
    g = F.global_max_pool(Tensor(X)).data
    np.testing.assert_array_equal(g[:, 0, 0], X.max(axis=(1, 2)))
    up = F.upsample_nearest(Tensor(X), 2).data
    np.testing.assert_array_equal(up[:, ::2, ::2], X)
    np.testing.assert_array_equal(up[:, 1::2, 1::2], X)


def test_dropout_scaling_and_identity():
    x = Tensor(np.ones((200, 200)))
    rng = np.random.default_rng(0)
    assert F.dropout(x, 0.0, rng) is x
    out = F.dropout(x, 0.5, rng).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.02


def test_sigmoid_stays_in_open_interval():
    out = F.sigmoid(Tensor(np.array([-30.0, 0.0, 30.0]))).data
    assert np.all(out > 0) and np.all(out < 1) and out[1] == 0.5


@pytest.mark.parametrize("case", op_cases(), ids=lambda c: c.name)
def test_op_gradients(case):
    assert check(case) < TOLERANCE
