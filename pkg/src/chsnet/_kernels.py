"""Compiled loops for the depthwise convolution, the hottest op in the network."""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def depthwise_forward(Xp, W, s, out):
    nb, ow, oh, c = out.shape
    f = W.shape[0]
    for b in range(nb):
        for i in range(ow):
            for j in range(oh):
                for a in range(f):
                    for k in range(f):
                        for ch in range(c):
                            out[b, i, j, ch] += Xp[b, i * s + a, j * s + k, ch] * W[a, k, ch]


@njit(cache=True, fastmath=True)
def depthwise_backward(Xp, W, G, s, gXp, gW, want_x, want_w):
    nb, ow, oh, c = G.shape
    f = W.shape[0]
    for b in range(nb):
        for i in range(ow):
            for j in range(oh):
                for a in range(f):
                    for k in range(f):
                        for ch in range(c):
                            g = G[b, i, j, ch]
                            if want_x:
                                gXp[b, i * s + a, j * s + k, ch] += g * W[a, k, ch]
                            if want_w:
                                gW[a, k, ch] += g * Xp[b, i * s + a, j * s + k, ch]


def depthwise(Xp: np.ndarray, W: np.ndarray, s: int, ow: int, oh: int) -> np.ndarray:
    out = np.zeros((Xp.shape[0], ow, oh, Xp.shape[3]), dtype=Xp.dtype)
    depthwise_forward(np.ascontiguousarray(Xp), np.ascontiguousarray(W, dtype=Xp.dtype), s, out)
    return out


def depthwise_grads(Xp, W, G, s, want_x=True, want_w=True):
    Xp = np.ascontiguousarray(Xp)
    W = np.ascontiguousarray(W, dtype=Xp.dtype)
    G = np.ascontiguousarray(G, dtype=Xp.dtype)
    gXp = np.zeros_like(Xp)
    # weight gradients accumulate in double to keep batch sums accurate
    gW = np.zeros(W.shape, dtype=np.float64)
    depthwise_backward(Xp, W, G, s, gXp, gW, want_x, want_w)
    return gXp, gW.astype(W.dtype)
