"""Independent reference implementations used by the tests.

The spectral oracle builds dense DFT matrices from their definition and never
calls ``numpy.fft``; the metric oracle counts pixels with Python loops.
"""

import numpy as np


def centered_dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT with output row ``k`` holding frequency ``k - n // 2``."""
    freq = np.arange(n) - n // 2
    return np.exp(-2j * np.pi * np.outer(freq, np.arange(n)) / n) / np.sqrt(n)


def mirror_average(S: np.ndarray) -> np.ndarray:
    """Average every coefficient with the conjugate of its negative-frequency partner."""
    m, k = S.shape
    out = np.empty_like(S)
    for a in range(m):
        for b in range(k):
            fa, fb = a - m // 2, b - k // 2
            ma, mb = (-fa + m // 2) % m, (-fb + k // 2) % k
            out[a, b] = 0.5 * (S[a, b] + np.conj(S[ma, mb]))
    return out


def dense_spectral_pool(x: np.ndarray, m: int, k: int) -> np.ndarray:
    """Crop the central ``m x k`` spectrum of every channel and invert (complex result)."""
    w, h, c = x.shape
    Dw, Dh = centered_dft_matrix(w), centered_dft_matrix(h)
    Im, Ik = centered_dft_matrix(m).conj().T, centered_dft_matrix(k).conj().T
    rw = slice(w // 2 - m // 2, w // 2 - m // 2 + m)
    rh = slice(h // 2 - k // 2, h // 2 - k // 2 + k)
    out = np.empty((m, k, c), dtype=complex)
    for ch in range(c):
        S = Dw @ x[:, :, ch] @ Dh.T
        out[:, :, ch] = Im @ mirror_average(S[rw, rh]) @ Ik.T
    return out * np.sqrt(m * k / (w * h))


def hand_confusion(y, p, threshold=0.5):
    tp = tn = fp = fn = 0
    for t, q in zip(np.ravel(y), np.ravel(p)):
        pred = q >= threshold
        if t and pred:
            tp += 1
        elif t:
            fn += 1
        elif pred:
            fp += 1
        else:
            tn += 1
    return tp, tn, fp, fn
