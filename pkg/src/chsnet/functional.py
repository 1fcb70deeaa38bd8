"""Differentiable primitives over channels-last tensors.

Spatial ops accept either a single map ``(w, h, d)`` or a batch ``(b, w, h, d)``.
Every function returns a new :class:`~chsnet.tensor.Tensor`; backward closures
return one gradient (or ``None``) per input.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import ConfigurationError, ShapeError
from .tensor import Tensor, as_tensor, make


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b, dtype_from=None):
    a = as_tensor(a, dtype=getattr(dtype_from, "dtype", None))
    b = as_tensor(b, dtype=a.dtype)
    return a, b


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor):
        a, b = _pair(a, b)
    else:
        b = as_tensor(b)
        a = as_tensor(a, dtype=b.dtype)
    sa, sb = a.shape, b.shape
    return make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting (per-channel, per-pixel gates)."""
    if not isinstance(a, Tensor):
        a, b = b, a
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    if isinstance(a, Tensor):
        a, b = _pair(a, b)
    else:
        b = as_tensor(b)
        a = as_tensor(a, dtype=b.dtype)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make(out, (a, b), backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make(np.log(xd), (x,), lambda g: (g / xd,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return make(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make(np.maximum(x.data, 0, dtype=x.dtype), (x,), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return make(s, (x,), lambda g: (g * s * (1.0 - s),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigurationError(f"unknown activation {kind!r}")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (depth by default)."""
    xs = list(xs)
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make(np.concatenate([t.data for t in xs], axis=axis), xs, backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; ``rate == 0`` is the identity."""
    if rate <= 0:
        return x
    if rate >= 1:
        raise ConfigurationError("dropout rate must be < 1")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make(x.data * keep, (x,), lambda g: (g * keep,))


# --------------------------------------------------------------- convolution

def channel_sum(a2: np.ndarray) -> np.ndarray:
    """Column sums of a 2D ``(n, c)`` array, via BLAS (much faster than ``sum(axis=0)``)."""
    return np.ones(a2.shape[0], dtype=a2.dtype) @ a2


def _as4d(a: np.ndarray) -> tuple[np.ndarray, bool]:
    if a.ndim == 4:
        return a, False
    if a.ndim == 3:
        return a[None], True
    raise ShapeError(f"expected (w,h,d) or (b,w,h,d), got shape {a.shape}")


def conv_output_size(n: int, f: int, padding: int, stride: int) -> int:
    """Output extent along one axis: floor((n + 2p - f) / s) + 1."""
    if stride <= 0:
        raise ConfigurationError(f"stride must be positive, got {stride}")
    return (n + 2 * padding - f) // stride + 1


def _taps(f: int, s: int, ow: int, oh: int):
    for i in range(f):
        for j in range(f):
            yield i, j, (slice(None), slice(i, i + s * (ow - 1) + 1, s), slice(j, j + s * (oh - 1) + 1, s))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` with a ``(f, f, d, r)`` kernel."""
    X, squeeze = _as4d(x.data)
    W = weight.data
    if W.ndim != 4 or W.shape[0] != W.shape[1]:
        raise ShapeError(f"kernel must be (f,f,d,r), got {W.shape}")
    f, _, d, r = W.shape
    if X.shape[-1] != d:
        raise ShapeError(f"kernel depth {d} does not match input depth {X.shape[-1]}")
    if padding < 0:
        raise ConfigurationError("padding must be non-negative")
    nb, w, h, _ = X.shape
    ow, oh = conv_output_size(w, f, padding, stride), conv_output_size(h, f, padding, stride)
    if ow < 1 or oh < 1:
        raise ConfigurationError(f"non-positive output extent ({ow},{oh}) for input {w}x{h}, f={f}")
    p, s = padding, stride
    Xp = np.pad(X, ((0, 0), (p, p), (p, p), (0, 0))) if p else X

    if f == 1 and s == 1:
        out = Xp @ W[0, 0]
    else:
        out = np.zeros((nb, ow, oh, r), dtype=X.dtype)
        for i, j, sl in _taps(f, s, ow, oh):
            out += Xp[sl] @ W[i, j]
    if bias is not None:
        out += bias.data

    def backward(g):
        G = g.reshape(nb, ow, oh, r)
        G2 = G.reshape(-1, r)
        gW = np.empty_like(W) if weight.requires_grad else None
        gX = np.zeros_like(Xp) if x.requires_grad else None
        if f == 1 and s == 1:
            if gW is not None:
                gW[0, 0] = Xp.reshape(-1, d).T @ G2
            if gX is not None:
                gX = G @ W[0, 0].T
        else:
            for i, j, sl in _taps(f, s, ow, oh):
                if gW is not None:
                    gW[i, j] = Xp[sl].reshape(-1, d).T @ G2
                if gX is not None:
                    gX[sl] += G @ W[i, j].T
        if gX is not None:
            if p:
                gX = gX[:, p:p + w, p:p + h]
            if squeeze:
                gX = gX[0]
        gb = channel_sum(G2) if bias is not None and bias.requires_grad else None
        return gX, gW, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make(out[0] if squeeze else out, inputs, backward)


def depthwise_conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """One ``f x f`` filter per input channel; ``weight`` has shape ``(f, f, d)``."""
    X, squeeze = _as4d(x.data)
    W = weight.data
    if W.ndim != 3 or W.shape[0] != W.shape[1]:
        raise ShapeError(f"depthwise kernel must be (f,f,d), got {W.shape}")
    f, _, d = W.shape
    if X.shape[-1] != d:
        raise ShapeError(f"depthwise kernel depth {d} does not match input depth {X.shape[-1]}")
    nb, w, h, _ = X.shape
    ow, oh = conv_output_size(w, f, padding, stride), conv_output_size(h, f, padding, stride)
    if ow < 1 or oh < 1:
        raise ConfigurationError(f"non-positive output extent ({ow},{oh})")
    p, s = padding, stride
    Xp = np.pad(X, ((0, 0), (p, p), (p, p), (0, 0))) if p else X

    out = _kernels.depthwise(Xp, W, s, ow, oh)

    def backward(g):
        G = g.reshape(nb, ow, oh, d)
        gX, gW = _kernels.depthwise_grads(Xp, W, G, s, x.requires_grad, weight.requires_grad)
        if not x.requires_grad:
            gX = None
        else:
            if p:
                gX = gX[:, p:p + w, p:p + h]
            if squeeze:
                gX = gX[0]
        return gX, (gW if weight.requires_grad else None)

    return make(out[0] if squeeze else out, (x, weight), backward)


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Fractionally strided convolution mapping ``(w, h, d)`` to ``(s*w, s*h, r)``.

    ``weight`` is ``(f, f, d, r)``.  It is the adjoint of :func:`conv2d` run with
    the same taps (kernel axes 2 and 3 swapped), zero padding and stride ``s``;
    outputs past ``s*w`` are cropped, which for ``s=1, f=2`` leaves a correlation
    with the flipped kernel padded by one row and column at the leading edge.
    """
    if stride not in (1, 2):
        raise ConfigurationError(f"transposed convolution supports stride 1 or 2, got {stride}")
    X, squeeze = _as4d(x.data)
    W = weight.data
    if W.ndim != 4 or W.shape[0] != W.shape[1]:
        raise ShapeError(f"kernel must be (f,f,d,r), got {W.shape}")
    f, _, d, r = W.shape
    if X.shape[-1] != d:
        raise ShapeError(f"kernel depth {d} does not match input depth {X.shape[-1]}")
    s = stride
    nb, w, h, _ = X.shape
    fw, fh = (w - 1) * s + f, (h - 1) * s + f
    full = np.zeros((nb, fw, fh, r), dtype=X.dtype)
    for i, j, sl in _taps(f, s, w, h):
        full[sl] += X @ W[i, j]
    out = full[:, : s * w, : s * h]
    if bias is not None:
        out = out + bias.data

    def backward(g):
        G = np.zeros((nb, fw, fh, r), dtype=X.dtype)
        G[:, : s * w, : s * h] = g.reshape(nb, s * w, s * h, r)
        gW = np.empty_like(W) if weight.requires_grad else None
        gX = np.zeros_like(X) if x.requires_grad else None
        X2 = X.reshape(-1, d)
        for i, j, sl in _taps(f, s, w, h):
            if gW is not None:
                gW[i, j] = X2.T @ G[sl].reshape(-1, r)
            if gX is not None:
                gX += G[sl] @ W[i, j].T
        if gX is not None and squeeze:
            gX = gX[0]
        gb = G.sum(axis=(0, 1, 2)) if bias is not None and bias.requires_grad else None
        return gX, gW, gb

    out = np.ascontiguousarray(out)
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make(out[0] if squeeze else out, inputs, backward)


# ------------------------------------------------------------- normalization

def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over every axis except depth.

    In training mode batch statistics are used and the running buffers are
    updated in place as ``running = momentum * running + (1 - momentum) * batch``.
    """
    xd = x.data
    c = xd.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch norm parameters must have shape ({c},)")
    x2 = xd.reshape(-1, c)
    n = x2.shape[0]
    gd, bd = gamma.data.astype(xd.dtype, copy=False), beta.data.astype(xd.dtype, copy=False)

    if training:
        mu = channel_sum(x2) / n
        xc = x2 - mu
        var = channel_sum(xc * xc) / n
        inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype, copy=False)
        xhat = xc * inv
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * (var * n / (n - 1) if n > 1 else var)

        def backward(g):
            g2 = g.reshape(-1, c)
            gsum = channel_sum(g2)
            gxhat = channel_sum(g2 * xhat)
            gx = None
            if x.requires_grad:
                # d xhat = g * gamma; the two projections remove mean and xhat components
                gx = ((g2 - gsum / n - xhat * (gxhat / n)) * (gd * inv)).reshape(xd.shape)
            gg = gxhat if gamma.requires_grad else None
            gb = gsum if beta.requires_grad else None
            return gx, gg, gb
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).astype(xd.dtype, copy=False)
        xhat = (x2 - running_mean.astype(xd.dtype, copy=False)) * inv

        def backward(g):
            g2 = g.reshape(-1, c)
            gx = (g2 * (gd * inv)).reshape(xd.shape) if x.requires_grad else None
            gg = channel_sum(g2 * xhat) if gamma.requires_grad else None
            gb = channel_sum(g2) if beta.requires_grad else None
            return gx, gg, gb

    out = (xhat * gd + bd).reshape(xd.shape)
    return make(out, (x, gamma, beta), backward)


# ------------------------------------------------------------------ pooling

def max_pool2d(x: Tensor, window: int = 2, stride: int = 2, padding: str = "valid") -> Tensor:
    """Per-window maximum; the gradient goes to the first maximum in row-major order."""
    if window < 1 or stride < 1:
        raise ConfigurationError("window and stride must be >= 1")
    X, squeeze = _as4d(x.data)
    nb, w, h, c = X.shape
    k, s = window, stride
    if padding == "valid":
        pads = ((0, 0), (0, 0))
    elif padding == "same":
        pads = []
        for n in (w, h):
            o = -(-n // s)
            total = max((o - 1) * s + k - n, 0)
            pads.append((total // 2, total - total // 2))
    else:
        raise ConfigurationError(f"padding must be 'valid' or 'same', got {padding!r}")
    if any(pads[0]) or any(pads[1]):
        Xp = np.pad(X, ((0, 0), pads[0], pads[1], (0, 0)), constant_values=-np.inf)
    else:
        Xp = X
    if Xp.shape[1] < k or Xp.shape[2] < k:
        raise ConfigurationError(f"window {k} larger than input {w}x{h}")
    ow, oh = (Xp.shape[1] - k) // s + 1, (Xp.shape[2] - k) // s + 1
    taps = [
        (slice(None), slice(a, a + s * (ow - 1) + 1, s), slice(b, b + s * (oh - 1) + 1, s))
        for a in range(k) for b in range(k)
    ]
    out = Xp[taps[0]].copy()
    for sl in taps[1:]:
        np.maximum(out, Xp[sl], out=out)

    def backward(g):
        G = g.reshape(nb, ow, oh, c)
        gX = np.zeros(Xp.shape, dtype=X.dtype)
        taken = np.zeros(out.shape, dtype=bool)
        # row-major scan: the first tap equal to the maximum receives the gradient
        for sl in taps:
            hit = Xp[sl] == out
            hit &= ~taken
            taken |= hit
            gX[sl] += G * hit
        gX = gX[:, pads[0][0]:pads[0][0] + w, pads[1][0]:pads[1][0] + h]
        return (gX[0] if squeeze else gX,)

    return make(out[0] if squeeze else out, (x,), backward)


def global_max_pool(x: Tensor) -> Tensor:
    """Spatial maximum per channel, keeping singleton spatial axes."""
    X, squeeze = _as4d(x.data)
    nb, w, h, c = X.shape
    flat = X.reshape(nb, w * h, c)
    idx = flat.argmax(axis=1)
    out = np.take_along_axis(flat, idx[:, None, :], axis=1).reshape(nb, 1, 1, c)

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[:, None, :], g.reshape(nb, 1, c), axis=1)
        gX = gflat.reshape(nb, w, h, c)
        return (gX[0] if squeeze else gX,)

    return make(out[0] if squeeze else out, (x,), backward)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    X, squeeze = _as4d(x.data)
    nb, w, h, c = X.shape
    out = X.repeat(factor, axis=1).repeat(factor, axis=2)

    def backward(g):
        G = g.reshape(nb, w, factor, h, factor, c).sum(axis=(2, 4))
        return (G[0] if squeeze else G,)

    return make(out[0] if squeeze else out, (x,), backward)
