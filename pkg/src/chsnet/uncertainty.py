"""Monte-Carlo dropout sampling and per-pixel binary entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from .errors import ConfigurationError
from .nn import Context, Module
from .tensor import Tensor

LN2 = float(np.log(2.0))


@dataclass
class UncertaintyMap:
    mean_mask: np.ndarray  # (w, h, 1), in [0, 1]
    entropy: np.ndarray  # (w, h, 1), in [0, ln 2]
    samples: np.ndarray | None = None  # (T, w, h, 1)


def binary_entropy(p) -> np.ndarray:
    """``-(p ln p + (1-p) ln(1-p))`` with ``0 ln 0 = 0``, clipped to ``[0, ln 2]``."""
    p = np.asarray(p, dtype=np.float64)
    return np.clip(entr(p) + entr(1.0 - p), 0.0, LN2)


def mc_dropout_uncertainty(
    model: Module,
    image: np.ndarray,
    T: int = 20,
    seed: int = 0,
    dropout: float | None = None,
    output: str = "infection",
    keep_samples: bool = False,
) -> UncertaintyMap:
    """Mean mask and entropy over ``T`` dropout-active inference passes.

    Batch norm uses running statistics, so the ``T`` passes are run as one
    batch of copies with independent dropout masks from a generator seeded by
    ``seed``.  ``dropout`` defaults to the network's configured rate.
    """
    if T < 2:
        raise ConfigurationError(f"need at least 2 samples, got T={T}")
    if output not in ("infection", "lung"):
        raise ConfigurationError("output must be 'infection' or 'lung'")
    img = np.asarray(image)
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise ConfigurationError("mc_dropout_uncertainty takes a single image")
        img = img[0]
    rate = model.cfg.dropout_rate if dropout is None else dropout
    ctx = Context(training=False, dropout=rate, rng=np.random.default_rng(seed))
    batch = np.broadcast_to(img, (T,) + img.shape).astype(model.cfg.dtype)
    lung, inf = model(Tensor(batch), ctx)
    chosen = inf if output == "infection" else lung
    if chosen is None:
        raise ConfigurationError("this model has no lung output")
    samples = chosen.data.astype(np.float64)
    p = samples.mean(axis=0)
    return UncertaintyMap(p, binary_entropy(p), samples if keep_samples else None)
