"""Unitary 2D DFT and the pooling operators built on it.

Spectra are kept centered: after :func:`dft2` the DC coefficient of a ``w x h``
plane sits at index ``(w // 2, h // 2)``.  Cropping a centered spectrum keeps the
lowest frequencies.  Before every inverse transform the spectrum is made
Hermitian on the grid being inverted (each coefficient averaged with the
conjugate of its mirror), so real inputs give real outputs even when a crop
leaves an unpaired Nyquist row or column.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import functional as F
from .errors import ConfigurationError, ShapeError
from .tensor import Tensor, make

AXES = (-3, -2)

# Residual imaginary parts above this (relative, double precision) indicate a bug.
IMAG_TOLERANCE = 1e-8


@dataclass
class ComplexPlane:
    """Centered spectrum of a ``(w, h, d)`` (or batched) real map."""

    real: np.ndarray
    imag: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ComplexPlane":
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def dft2(x) -> ComplexPlane:
    """Per-channel unitary DFT (1/sqrt(wh) normalization), center-shifted."""
    z = np.fft.fft2(_data(x), axes=AXES, norm="ortho")
    return ComplexPlane.from_complex(np.fft.fftshift(z, axes=AXES))


def idft2(spec: ComplexPlane | np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft2`; returns the complex spatial map."""
    z = spec.to_complex() if isinstance(spec, ComplexPlane) else spec
    return np.fft.ifft2(np.fft.ifftshift(z, axes=AXES), axes=AXES, norm="ortho")


def hermitian_symmetrize(z: np.ndarray) -> np.ndarray:
    """Average a centered spectrum with the conjugate of its point mirror.

    On a centered grid of size ``n`` index ``i`` holds frequency ``i - n//2``, so
    the mirror index is ``(2*(n//2) - i) mod n``.
    """
    w, h = z.shape[-3], z.shape[-2]
    mi = (2 * (w // 2) - np.arange(w)) % w
    mj = (2 * (h // 2) - np.arange(h)) % h
    mirror = z[..., mi, :, :][..., :, mj, :]
    return 0.5 * (z + np.conj(mirror))


def _crop_slices(n: int, m: int) -> slice:
    start = n // 2 - m // 2
    return slice(start, start + m)


def crop_spectrum(z: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    w, h = z.shape[-3], z.shape[-2]
    return z[..., _crop_slices(w, out_w), _crop_slices(h, out_h), :]


def pad_spectrum(z: np.ndarray, w: int, h: int) -> np.ndarray:
    """Zero-pad a centered spectrum back to ``w x h`` (adjoint of the crop)."""
    m, k = z.shape[-3], z.shape[-2]
    out = np.zeros(z.shape[:-3] + (w, h, z.shape[-1]), dtype=z.dtype)
    out[..., _crop_slices(w, m), _crop_slices(h, k), :] = z
    return out


def _real_inverse(z: np.ndarray) -> np.ndarray:
    y = idft2(hermitian_symmetrize(z))
    resid = np.abs(y.imag).max() if y.size else 0.0
    tol = max(IMAG_TOLERANCE, 1000 * np.finfo(y.real.dtype).eps)
    if resid > tol * max(1.0, np.abs(y.real).max()):
        raise ArithmeticError(f"spectral inverse left an imaginary residue of {resid:.3g}")
    return y.real


def spectral_pool_complex(x, out_w: int, out_h: int) -> np.ndarray:
    """Explicit transform route of :func:`spectral_pool`, imaginary part kept.

    DFT, center crop, Hermitian symmetrization, inverse DFT and rescale.  The
    imaginary part of the result is numerical residue only.
    """
    X = _data(x)
    w, h = X.shape[-3], X.shape[-2]
    spec = crop_spectrum(dft2(X).to_complex(), out_w, out_h)
    return idft2(hermitian_symmetrize(spec)) * np.sqrt(out_w * out_h / (w * h))


@lru_cache(maxsize=None)
def _axis_operator(n: int, keep: int, out_len: int) -> tuple[np.ndarray, np.ndarray | None]:
    """One axis of crop-and-invert as a dense ``out_len x n`` matrix (real, imag).

    Entry ``(t, j)`` is ``(1/n) * sum_k exp(2 pi i k (t/out_len - j/n))`` over the
    ``keep`` central frequencies ``k``.  With ``out_len == keep`` this is the
    unitary crop-and-invert including the constant-preserving rescale; with
    ``out_len == n`` it is a resolution-preserving low-pass.  Taking the real part
    of the separable 2D product equals symmetrizing the spectrum before the
    inverse, since the inverse of ``conj(Z(-k))`` is ``conj`` of the inverse of
    ``Z(k)``.
    """
    k = np.arange(keep) - keep // 2
    t = np.arange(out_len)[:, None, None] / out_len
    j = np.arange(n)[None, :, None] / n
    A = np.exp(2j * np.pi * k[None, None, :] * (t - j)).sum(axis=-1) / n
    imag = A.imag if np.abs(A.imag).max() > 1e-13 else None
    return np.ascontiguousarray(A.real), (None if imag is None else np.ascontiguousarray(imag))


def _along(X: np.ndarray, Aw: np.ndarray, Ah: np.ndarray) -> np.ndarray:
    """Apply ``Aw`` along axis -3 and ``Ah`` along axis -2 of ``X``."""
    lead = X.shape[:-3]
    w, h, c = X.shape[-3:]
    B = int(np.prod(lead)) if lead else 1
    t, s = Aw.shape[0], Ah.shape[0]
    Y = np.matmul(Aw, X.reshape(B, w, h * c)).reshape(B * t, h, c)
    return np.matmul(Ah, Y).reshape(lead + (t, s, c))


class _SeparableSpectral:
    """``Re(Aw X Ah^T)`` for complex per-axis operators, and its adjoint."""

    def __init__(self, w: int, h: int, keep_w: int, keep_h: int, out_w: int, out_h: int, dtype):
        wr, wi = _axis_operator(w, keep_w, out_w)
        hr, hi = _axis_operator(h, keep_h, out_h)
        cast = lambda a: None if a is None else a.astype(dtype)  # noqa: E731
        self.wr, self.wi, self.hr, self.hi = cast(wr), cast(wi), cast(hr), cast(hi)

    def forward(self, X: np.ndarray) -> np.ndarray:
        out = _along(X, self.wr, self.hr)
        if self.wi is not None and self.hi is not None:
            out -= _along(X, self.wi, self.hi)
        return out

    def adjoint(self, G: np.ndarray) -> np.ndarray:
        out = _along(G, self.wr.T, self.hr.T)
        if self.wi is not None and self.hi is not None:
            out -= _along(G, self.wi.T, self.hi.T)
        return out


def spectral_pool(x: Tensor, out_w: int, out_h: int) -> Tensor:
    """Downsample by keeping the central ``out_w x out_h`` block of the spectrum.

    The result is rescaled by ``sqrt(out_w*out_h / (w*h))`` so constant maps keep
    their value.  The gradient is the adjoint: the output-gradient spectrum is
    zero-padded back to ``w x h`` and inverted.
    """
    X = x.data
    if X.ndim not in (3, 4):
        raise ShapeError(f"expected (w,h,d) or (b,w,h,d), got shape {X.shape}")
    w, h = X.shape[-3], X.shape[-2]
    if not (1 <= out_w <= w and 1 <= out_h <= h):
        raise ConfigurationError(f"cannot spectral-pool {w}x{h} to {out_w}x{out_h}")
    op = _SeparableSpectral(w, h, out_w, out_h, out_w, out_h, X.dtype)
    return make(op.forward(X), (x,), lambda g: (op.adjoint(g),))


def spectral_lowpass(x: Tensor, keep_w: int, keep_h: int) -> Tensor:
    """Zero every frequency outside the central ``keep_w x keep_h`` block.

    Resolution-preserving and self-adjoint.
    """
    X = x.data
    w, h = X.shape[-3], X.shape[-2]
    if not (1 <= keep_w <= w and 1 <= keep_h <= h):
        raise ConfigurationError(f"cannot keep {keep_w}x{keep_h} frequencies of a {w}x{h} map")
    op = _SeparableSpectral(w, h, keep_w, keep_h, w, h, X.dtype)
    return make(op.forward(X), (x,), lambda g: (op.adjoint(g),))


def spectral_lowpass_complex(x, keep_w: int, keep_h: int) -> np.ndarray:
    """Explicit transform route of :func:`spectral_lowpass`, imaginary part kept."""
    X = _data(x)
    w, h = X.shape[-3], X.shape[-2]
    spec = dft2(X).to_complex()
    mask = np.zeros((w, h, 1))
    mask[_crop_slices(w, keep_w), _crop_slices(h, keep_h)] = 1.0
    return idft2(hermitian_symmetrize(spec * mask))


def max_pool(x: Tensor, window: int = 2, stride: int = 2, padding: str = "valid") -> Tensor:
    return F.max_pool2d(x, window, stride, padding)


def _half(n: int) -> int:
    return -(-n // 2)


def hybrid_pool(
    x: Tensor,
    mode: str,
    mix_weight: Tensor,
    mix_bias: Tensor | None = None,
) -> Tensor:
    """Spectral and max pooling in parallel, concatenated, mixed by a 1x1 conv.

    ``mix_weight`` has shape ``(1, 1, 2d, d_out)``; the first ``d`` input rows
    read the spectral branch and the last ``d`` the max branch.

    ``valid`` halves the spatial extents (spectral crop to half, 2x2/2 max);
    ``same`` keeps them (spectral low-pass to half the band, 3x3/1 same max).
    """
    w, h = x.shape[-3], x.shape[-2]
    if mode == "valid":
        if w % 2 or h % 2:
            raise ConfigurationError(f"valid hybrid pooling needs even extents, got {w}x{h}")
        spec = spectral_pool(x, w // 2, h // 2)
        peak = F.max_pool2d(x, 2, 2, "valid")
    elif mode == "same":
        spec = spectral_lowpass(x, _half(w), _half(h))
        peak = F.max_pool2d(x, 3, 1, "same")
    else:
        raise ConfigurationError(f"hybrid pool mode must be 'valid' or 'same', got {mode!r}")
    return F.conv2d(F.concat([spec, peak]), mix_weight, mix_bias)


def global_spectral_max_pool(x: Tensor) -> Tensor:
    """Low-pass to half resolution spectrally, then take the spatial maximum per channel."""
    w, h = x.shape[-3], x.shape[-2]
    if w < 2 or h < 2:
        raise ConfigurationError(f"global spectral-max pooling needs extents >= 2, got {w}x{h}")
    return F.global_max_pool(spectral_pool(x, _half(w), _half(h)))
