"""Spectral depth / spatial attention refining encoder maps on the skip path.

Each gate module has an ``override`` attribute: when set to a number the
learned descriptor is replaced by that constant, which is how the open-gate
identities are exercised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .errors import ConfigurationError, ShapeError
from .nn import INFER, BatchNorm, Conv2d, Init, Module
from .spectral import global_spectral_max_pool
from .tensor import Tensor

SCNN_REDUCTION = 4

# Three stacked bias-free ReLU layers often start with every descriptor channel
# at exactly zero, and such a gate never recovers (its gradient is zero).
# Starting the descriptor-path biases positive opens the gate at init.
DESCRIPTOR_BIAS_INIT = 1.0


@dataclass
class AttentionDescriptors:
    depth: Tensor  # (b, 1, 1, p)
    spatial: Tensor  # (b, 2m, 2n, 1)


def _constant_like(x: Tensor, shape, value: float) -> Tensor:
    return Tensor(np.full(shape, value, dtype=x.dtype))


class SpectralDepthAttention(Module):
    """Per-channel gate from global spectral-max pooling and a shallow 1x1 CNN."""

    def __init__(self, init: Init, p: int):
        super().__init__()
        hidden = max(1, p // SCNN_REDUCTION)
        self.p = p
        self.scnn1 = Conv2d(init, p, hidden, 1)
        self.scnn2 = Conv2d(init, hidden, p, 1)
        self.descriptor_conv = Conv2d(init, p, p, 1)
        for conv in (self.scnn1, self.scnn2, self.descriptor_conv):
            conv.bias.data[...] = DESCRIPTOR_BIAS_INIT
        self.mix = Conv2d(init, p, p, 1)
        self.bn = BatchNorm(init, p)
        self.override: float | None = None

    def descriptor(self, x: Tensor) -> Tensor:
        w, h = x.shape[-3], x.shape[-2]
        if w < 2 or h < 2:
            raise ShapeError(f"depth attention needs extents >= 2, got {w}x{h}")
        if x.shape[-1] != self.p:
            raise ShapeError(f"expected depth {self.p}, got {x.shape[-1]}")
        if self.override is not None:
            return _constant_like(x, x.shape[:-3] + (1, 1, self.p), self.override)
        z = global_spectral_max_pool(x)
        z = F.relu(self.scnn2(F.relu(self.scnn1(z))))
        return F.relu(self.descriptor_conv(z))

    def apply(self, x: Tensor, a_d: Tensor, ctx=INFER) -> Tensor:
        return F.relu(self.bn(self.mix(F.mul(x, a_d)), ctx))

    def forward(self, x, ctx=INFER):
        return self.apply(x, self.descriptor(x), ctx)


class SpectralSpatialAttention(Module):
    """Per-pixel gate driven by a deeper map and the shallower depth-attended map.

    ``fine`` is ``F_d`` of the shallower layer, shape ``(2m, 2n, p/2)``;
    ``coarse`` is the deeper map, shape ``(m, n, p)``.
    """

    def __init__(self, init: Init, p: int, gate_activation: str = "sigmoid"):
        super().__init__()
        if p % 2:
            raise ConfigurationError(f"spatial attention needs even depth, got {p}")
        if gate_activation not in ("sigmoid", "relu"):
            raise ConfigurationError(f"unknown gate activation {gate_activation!r}")
        self.p = p
        self.gate_activation = gate_activation
        self.down = Conv2d(init, p // 2, p, 2, stride=2)
        self.lateral = Conv2d(init, p, p, 1)
        self.gamma_bn = BatchNorm(init, p)
        self.gate_conv = Conv2d(init, p, 1, 1)
        self.mix = Conv2d(init, p // 2, p // 2, 1)
        self.bn = BatchNorm(init, p // 2)
        self.override: float | None = None

    def _check(self, coarse: Tensor, fine: Tensor) -> None:
        m, n, p = coarse.shape[-3:]
        fm, fn, fp = fine.shape[-3:]
        if (fm, fn) != (2 * m, 2 * n):
            raise ShapeError(f"spatial attention needs 2:1 extents, got {fm}x{fn} vs {m}x{n}")
        if p != self.p or fp != self.p // 2:
            raise ShapeError(f"expected depths ({self.p}, {self.p // 2}), got ({p}, {fp})")

    def descriptor(self, coarse: Tensor, fine: Tensor, ctx=INFER) -> Tensor:
        self._check(coarse, fine)
        if self.override is not None:
            return _constant_like(fine, fine.shape[:-1] + (1,), self.override)
        gamma = F.relu(self.gamma_bn(self.down(fine) + self.lateral(coarse), ctx))
        gate = F.activation(self.gate_conv(gamma), self.gate_activation)
        return F.upsample_nearest(gate, 2)

    def apply(self, fine: Tensor, a_s: Tensor, ctx=INFER) -> Tensor:
        return self.bn(self.mix(F.mul(fine, a_s)), ctx)

    def forward(self, coarse, fine, ctx=INFER):
        return self.apply(fine, self.descriptor(coarse, fine, ctx), ctx)


class SSDSkip(Module):
    """Refine an encoder map with depth then spatial attention.

    ``encoder_map`` is ``(2m, 2n, c)``; ``context`` is the deeper map
    ``(m, n, c_ctx)``.  When ``c_ctx != 2c`` a 1x1 convolution reconciles the
    depth before spatial attention.  Output has the encoder map's shape.
    """

    def __init__(self, init: Init, c: int, c_context: int, gate_activation: str = "sigmoid"):
        super().__init__()
        self.c, self.c_context = c, c_context
        self.depth = SpectralDepthAttention(init, c)
        self.reconcile = Conv2d(init, c_context, 2 * c, 1) if c_context != 2 * c else None
        self.spatial = SpectralSpatialAttention(init, 2 * c, gate_activation)

    def descriptors(self, encoder_map: Tensor, context: Tensor, ctx=INFER) -> AttentionDescriptors:
        f_d = self.depth(encoder_map, ctx)
        coarse = self.reconcile(context) if self.reconcile is not None else context
        return AttentionDescriptors(self.depth.descriptor(encoder_map), self.spatial.descriptor(coarse, f_d, ctx))

    def forward(self, encoder_map, context, ctx=INFER):
        em, en = encoder_map.shape[-3], encoder_map.shape[-2]
        cm, cn = context.shape[-3], context.shape[-2]
        if (em, en) != (2 * cm, 2 * cn):
            raise ShapeError(f"skip needs a context at half resolution, got {em}x{en} vs {cm}x{cn}")
        if context.shape[-1] != self.c_context or encoder_map.shape[-1] != self.c:
            raise ShapeError("skip depths do not match the configured widths")
        f_d = self.depth(encoder_map, ctx)
        coarse = self.reconcile(context) if self.reconcile is not None else context
        return self.spatial(coarse, f_d, ctx)
