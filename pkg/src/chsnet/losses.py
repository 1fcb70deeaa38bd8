"""Binary cross-entropy, soft Dice and their equal-weight combination."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .errors import ConfigurationError, ShapeError
from .tensor import Tensor, as_tensor

CLAMP = 1e-7
REDUCTIONS = ("mean", "sum")


def _operands(y, p) -> tuple[Tensor, Tensor]:
    p = as_tensor(p)
    y = as_tensor(y, dtype=p.dtype)
    if y.shape != p.shape:
        raise ShapeError(f"target shape {y.shape} does not match prediction shape {p.shape}")
    return y, p


def bce_loss(y, p, reduction: str = "mean") -> Tensor:
    """``-sum(y ln p + (1 - y) ln(1 - p))`` with ``p`` clamped to ``[1e-7, 1 - 1e-7]``.

    ``reduction="mean"`` divides by the element count.
    """
    if reduction not in REDUCTIONS:
        raise ConfigurationError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")
    y, p = _operands(y, p)
    q = F.clip(p, CLAMP, 1.0 - CLAMP)
    ll = F.add(F.mul(y, F.log(q)), F.mul(F.sub(1.0, y), F.log(F.sub(1.0, q))))
    total = F.mul(F.sum(ll), -1.0)
    return F.mul(total, 1.0 / y.data.size) if reduction == "mean" else total


def dice_loss(y, p, smooth: float = 1.0) -> Tensor:
    """``1 - (2 sum(y p) + eps) / (sum(y^2) + sum(p^2) + eps)`` over all elements.

    ``smooth`` (eps) keeps the ratio defined when both masks are empty.
    """
    if smooth < 0:
        raise ConfigurationError("smooth must be non-negative")
    y, p = _operands(y, p)
    num = F.add(F.mul(F.sum(F.mul(y, p)), 2.0), smooth)
    den = F.add(F.add(F.sum(F.mul(y, y)), F.sum(F.mul(p, p))), smooth)
    return F.sub(1.0, F.div(num, den))


def segmentation_loss(y, p, reduction: str = "mean", smooth: float = 1.0) -> Tensor:
    """Half BCE plus half Dice."""
    return F.add(F.mul(bce_loss(y, p, reduction), 0.5), F.mul(dice_loss(y, p, smooth), 0.5))


def cascade_loss(outputs, lung_target, infection_target, reduction: str = "mean") -> Tensor:
    """Sum of the stage losses for ``(lung, infection)`` outputs.

    A ``None`` lung output (single-net model) contributes nothing.
    """
    lung, infection = outputs
    loss = segmentation_loss(infection_target, infection, reduction)
    if lung is not None:
        loss = F.add(segmentation_loss(lung_target, lung, reduction), loss)
    return loss


def loss_value(y: np.ndarray, p: np.ndarray, reduction: str = "mean") -> float:
    """Plain-float :func:`segmentation_loss`, for evaluation outside a tape."""
    return float(segmentation_loss(y, p, reduction).item())
