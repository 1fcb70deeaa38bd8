"""Composite convolutional units: DSC, inception convolution, residual inception block."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from . import functional as F
from .errors import ConfigurationError
from .nn import (
    INFER,
    BatchNorm,
    Conv2d,
    ConvBNReLU,
    DepthwiseSeparableConv,
    HybridPool,
    Init,
    MaxPool,
    Module,
    padding_for,
)
from .tensor import Tensor


@dataclass(frozen=True)
class BlockSpec:
    kind: str  # "dsc" | "ic" | "rib"
    filters: int
    kernel_size: int = 3
    use_hybrid_pool: bool = True
    use_residual: bool = True

    def __post_init__(self):
        if self.kind not in ("dsc", "ic", "rib"):
            raise ConfigurationError(f"unknown block kind {self.kind!r}")
        if self.filters < 1:
            raise ConfigurationError("filter count must be >= 1")
        if self.kind == "dsc" and self.kernel_size % 2 == 0:
            raise ConfigurationError("DSC kernel size must be odd")


def depthwise_separable_conv(
    x: Tensor,
    depthwise: Tensor,
    pointwise: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | str = "same",
) -> Tensor:
    f = depthwise.shape[0]
    y = F.depthwise_conv2d(x, depthwise, stride, padding_for(f, padding))
    return F.conv2d(y, pointwise, bias)


def dsc_cost_ratio(f: int, d: int, r: int) -> tuple[float, int, int]:
    """Weight counts of a depthwise separable vs a standard ``f x f`` conv.

    Returns ``(n_dsc / n_sc, n_dsc, n_sc)`` with ``n_sc = f*f*d*r`` and
    ``n_dsc = f*f*d + d*r``; the ratio is exactly ``1/r + 1/f**2``.
    """
    if min(f, d, r) < 1:
        raise ConfigurationError("f, d and r must be >= 1")
    n_sc = f * f * d * r
    n_dsc = f * f * d + d * r
    return float(Fraction(n_dsc, n_sc)), n_dsc, n_sc


class InceptionConv(Module):
    """Parallel 1x1 / 3x3 / 5x5 DSC branches plus a same-size pooling branch.

    Each DSC branch is DSC -> BN -> ReLU with ``r`` filters; the pooling branch
    is a same-mode hybrid pool (or 3x3 max pool plus 1x1 projection when hybrid
    pooling is switched off) also producing ``r`` maps.  The ``4r`` maps are
    mixed by a 1x1 conv, BN and ReLU.
    """

    kernel_sizes = (1, 3, 5)

    def __init__(self, init: Init, d: int, r: int, use_hybrid_pool: bool = True):
        super().__init__()
        if r < 4:
            raise ConfigurationError(f"inception convolution needs r >= 4, got {r}")
        self.d, self.r, self.use_hybrid_pool = d, r, use_hybrid_pool
        self.branch1 = ConvBNReLU(init, d, r, 1, separable=True)
        self.branch3 = ConvBNReLU(init, d, r, 3, separable=True)
        self.branch5 = ConvBNReLU(init, d, r, 5, separable=True)
        if use_hybrid_pool:
            self.pool = HybridPool(init, d, r, "same")
        else:
            self.pool_max = MaxPool(3, 1, "same")
            self.pool = Conv2d(init, d, r, 1)
        self.mix = Conv2d(init, 4 * r, r, 1)
        self.bn = BatchNorm(init, r)

    def branches(self, x: Tensor, ctx=INFER) -> list[Tensor]:
        pooled = self.pool(x if self.use_hybrid_pool else self.pool_max(x))
        return [self.branch1(x, ctx), self.branch3(x, ctx), self.branch5(x, ctx), pooled]

    def forward(self, x, ctx=INFER):
        return F.relu(self.bn(self.mix(F.concat(self.branches(x, ctx))), ctx))


class ResidualInceptionBlock(Module):
    """IC -> IC main path plus a BN'd 3x3 DSC shortcut, added, then ReLU."""

    def __init__(self, init: Init, d: int, d_out: int, use_hybrid_pool: bool = True, use_residual: bool = True):
        super().__init__()
        if d_out < 4:
            raise ConfigurationError(f"residual inception block needs d' >= 4, got {d_out}")
        self.use_residual = use_residual
        self.ic1 = InceptionConv(init, d, d_out, use_hybrid_pool)
        self.ic2 = InceptionConv(init, d_out, d_out, use_hybrid_pool)
        if use_residual:
            self.shortcut = DepthwiseSeparableConv(init, d, d_out, 3)
            self.shortcut_bn = BatchNorm(init, d_out)

    def forward(self, x, ctx=INFER):
        main = self.ic2(self.ic1(x, ctx), ctx)
        if not self.use_residual:
            return F.relu(main)
        return F.relu(main + self.shortcut_bn(self.shortcut(x), ctx))


class DoubleConv(Module):
    """Baseline U-Net unit: two 3x3 standard convs, each with BN and ReLU."""

    def __init__(self, init: Init, d: int, d_out: int):
        super().__init__()
        self.conv1 = ConvBNReLU(init, d, d_out, 3, separable=False)
        self.conv2 = ConvBNReLU(init, d_out, d_out, 3, separable=False)

    def forward(self, x, ctx=INFER):
        return self.conv2(self.conv1(x, ctx), ctx)


class Downsample(Module):
    """Halve spatial extents between encoder stages, keeping depth."""

    def __init__(self, init: Init, d: int, use_hybrid_pool: bool = True):
        super().__init__()
        self.use_hybrid_pool = use_hybrid_pool
        self.pool = HybridPool(init, d, d, "valid") if use_hybrid_pool else MaxPool(2, 2, "valid")

    def forward(self, x, ctx=INFER):
        return downsample_between_ribs(x, self.pool)


def downsample_between_ribs(x: Tensor, pool: HybridPool) -> Tensor:
    """Valid hybrid pooling between consecutive encoder stages."""
    w, h = x.shape[-3], x.shape[-2]
    if w % 2 or h % 2:
        raise ConfigurationError(f"downsampling needs even extents, got {w}x{h}")
    return pool(x)


def build_block(init: Init, spec: BlockSpec, d: int) -> Module:
    if spec.kind == "dsc":
        return DepthwiseSeparableConv(init, d, spec.filters, spec.kernel_size)
    if spec.kind == "ic":
        return InceptionConv(init, d, spec.filters, spec.use_hybrid_pool)
    return ResidualInceptionBlock(init, d, spec.filters, spec.use_hybrid_pool, spec.use_residual)
