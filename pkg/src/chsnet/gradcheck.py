"""Finite-difference checks over every differentiable op and block.

Each case reduces its output to a scalar with a fixed random weighting,
``sum(w * out)``, so every output element contributes a distinct direction.
Input gradients are checked exhaustively; for modules a few entries of every
parameter are checked as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import functional as F
from .attention import SpectralDepthAttention, SpectralSpatialAttention, SSDSkip
from .blocks import InceptionConv, ResidualInceptionBlock, depthwise_separable_conv
from .losses import bce_loss, dice_loss, segmentation_loss
from .network import CHSNet, NetworkConfig
from .nn import Context, Init, Module
from .spectral import global_spectral_max_pool, hybrid_pool, spectral_lowpass, spectral_pool
from .tensor import GRAD_FLOOR, GradCheck, Tensor, grad_check, grad_check_param

TOLERANCE = 1e-4
KINK_TOL = 1e-3
# at most this fraction of network entries may be excluded as kinks
MAX_KINK_FRACTION = 0.1
NETWORK_EPS = 1e-6
NETWORK_FLOOR = 1e-5


@dataclass
class GradCase:
    name: str
    fn: Callable[[Tensor], Tensor]
    x: np.ndarray
    module: Module | None = None
    entries_per_param: int = 2
    eps: float = 1e-5
    kink_tol: float | None = None
    floor: float = GRAD_FLOOR


def weighted(fn: Callable[[Tensor], Tensor], out_shape, seed: int) -> Callable[[Tensor], Tensor]:
    # dividing by the output size keeps |f| near 1, so the rounding noise of a
    # difference quotient (about ulp(f) / eps) stays far below GRAD_FLOOR
    w = np.random.default_rng(seed).normal(size=out_shape) / max(1, int(np.prod(out_shape)))
    return lambda x: F.sum(F.mul(fn(x), w))


def _case(name, fn, x, seed, module=None, entries=2, eps=1e-5) -> GradCase:
    shape = fn(Tensor(x)).shape
    return GradCase(name, weighted(fn, shape, seed), x, module, entries, eps)


def op_cases(seed: int = 0) -> list[GradCase]:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 6, 5, 3))
    xe = rng.normal(size=(2, 6, 6, 3))
    pos = rng.uniform(0.2, 2.0, size=(2, 4, 4, 2))
    posx = rng.uniform(0.5, 2.0, size=x.shape)
    k3 = Tensor(rng.normal(size=(3, 3, 3, 4)))
    k2 = Tensor(rng.normal(size=(2, 2, 3, 4)))
    dw = Tensor(rng.normal(size=(3, 3, 3)))
    pw = Tensor(rng.normal(size=(1, 1, 3, 4)))
    b4 = Tensor(rng.normal(size=4))
    g3, be3 = Tensor(rng.uniform(0.5, 1.5, 3)), Tensor(rng.normal(size=3))
    mix = Tensor(rng.normal(size=(1, 1, 6, 3)))
    gate = Tensor(rng.uniform(0.1, 0.9, size=(2, 6, 5, 1)))
    drop_rng_seed = seed + 11

    def bn_train(t):
        return F.batch_norm(t, g3, be3, np.zeros(3), np.ones(3), True)

    def bn_infer(t):
        return F.batch_norm(t, g3, be3, np.full(3, 0.2), np.full(3, 1.7), False)

    specs = [
        ("add", lambda t: F.add(t, gate), x),
        ("sub", lambda t: F.sub(gate, t), x),
        ("mul", lambda t: F.mul(t, gate), x),
        ("div", lambda t: F.div(gate, t), posx),
        ("log", F.log, pos),
        ("sigmoid", F.sigmoid, x),
        ("relu", F.relu, x),
        ("clip", lambda t: F.clip(t, -0.5, 0.5), x),
        ("concat", lambda t: F.concat([t, F.mul(t, t)]), x),
        ("conv2d_same", lambda t: F.conv2d(t, k3, b4, 1, 1), x),
        ("conv2d_stride2", lambda t: F.conv2d(t, k3, b4, 2, 0), xe),
        ("conv2d_2x2_stride2", lambda t: F.conv2d(t, k2, b4, 2, 0), xe),
        ("depthwise_conv2d", lambda t: F.depthwise_conv2d(t, dw, 1, 1), x),
        ("depthwise_conv2d_stride2", lambda t: F.depthwise_conv2d(t, dw, 2, 1), xe),
        ("dsc", lambda t: depthwise_separable_conv(t, dw, pw, b4), x),
        ("transposed_conv2d_s2", lambda t: F.transposed_conv2d(t, k2, b4, 2), x),
        ("transposed_conv2d_s1", lambda t: F.transposed_conv2d(t, k2, b4, 1), x),
        ("batch_norm_train", bn_train, x),
        ("batch_norm_infer", bn_infer, x),
        ("max_pool_valid", lambda t: F.max_pool2d(t, 2, 2, "valid"), xe),
        ("max_pool_same", lambda t: F.max_pool2d(t, 3, 1, "same"), x),
        ("global_max_pool", F.global_max_pool, x),
        ("upsample_nearest", lambda t: F.upsample_nearest(t, 2), x),
        ("dropout_fixed_stream", lambda t: F.dropout(t, 0.3, np.random.default_rng(drop_rng_seed)), x),
        ("spectral_pool", lambda t: spectral_pool(t, 3, 3), x),
        ("spectral_pool_even", lambda t: spectral_pool(t, 3, 3), xe),
        ("spectral_lowpass", lambda t: spectral_lowpass(t, 3, 3), x),
        ("hybrid_pool_valid", lambda t: hybrid_pool(t, "valid", mix), xe),
        ("hybrid_pool_same", lambda t: hybrid_pool(t, "same", mix), x),
        ("global_spectral_max_pool", global_spectral_max_pool, x),
    ]
    return [_case(name, fn, arr, seed + i) for i, (name, fn, arr) in enumerate(specs)]


def loss_cases(seed: int = 0) -> list[GradCase]:
    rng = np.random.default_rng(seed)
    y = (rng.random((2, 4, 4, 1)) > 0.5).astype(float)
    p = rng.uniform(0.05, 0.95, size=y.shape)
    return [
        GradCase("bce_loss_mean", lambda t: bce_loss(y, t, "mean"), p),
        GradCase("bce_loss_sum", lambda t: bce_loss(y, t, "sum"), p),
        GradCase("dice_loss", lambda t: dice_loss(y, t), p),
        GradCase("segmentation_loss", lambda t: segmentation_loss(y, t), p),
    ]


def _module_case(name, module, fn, x, seed, entries=2) -> GradCase:
    return _case(name, fn, x, seed, module, entries)


def block_cases(seed: int = 0) -> list[GradCase]:
    rng = np.random.default_rng(seed)
    init = Init(seed)
    ctx = Context.train()
    x = rng.normal(size=(2, 6, 6, 4))
    coarse = rng.normal(size=(2, 3, 3, 8))
    cases = []

    from .nn import DepthwiseSeparableConv

    dsc = DepthwiseSeparableConv(init, 4, 5, 3)
    cases.append(_module_case("DSC", dsc, lambda t: dsc(t, ctx), x, seed + 1))
    ic = InceptionConv(init, 4, 4)
    cases.append(_module_case("IC", ic, lambda t: ic(t, ctx), x, seed + 2))
    rib = ResidualInceptionBlock(init, 4, 8)
    cases.append(_module_case("RIB", rib, lambda t: rib(t, ctx), x, seed + 3))
    sda = SpectralDepthAttention(init, 4)
    cases.append(_module_case("SDA", sda, lambda t: sda(t, ctx), x, seed + 4))
    ssa = SpectralSpatialAttention(init, 8)
    fine = rng.normal(size=(2, 6, 6, 4))
    cases.append(_module_case("SSA_fine", ssa, lambda t: ssa(Tensor(coarse), t, ctx), fine, seed + 5))
    cases.append(_module_case("SSA_coarse", ssa, lambda t: ssa(t, Tensor(fine), ctx), coarse, seed + 6, 0))
    skip = SSDSkip(init, 4, 8)
    cases.append(_module_case("SSD_skip", skip, lambda t: skip(t, Tensor(coarse), ctx), x, seed + 7))
    return cases


def network_cases(seed: int = 0) -> list[GradCase]:
    """A 2-stage CHS-Net on 16x16 slices, through the combined cascade loss."""
    cfg = NetworkConfig(stages=2, base_filters=4, depth_growth=2.0, input_size=(16, 16, 1), seed=seed)
    net = CHSNet(cfg)
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(2, 16, 16, 1))
    lung_y = (rng.random(x.shape) > 0.5).astype(float)
    inf_y = (rng.random(x.shape) > 0.7).astype(float)
    ctx = Context.train()

    def fn(t):
        lung, inf = net(t, ctx)
        return F.add(segmentation_loss(lung_y, lung), segmentation_loss(inf_y, inf))

    # Thousands of ReLU and max units: a small step keeps kink crossings rare,
    # those that remain are detected and skipped, and the floor is raised to
    # cover the larger rounding noise of the small step (typical entries are
    # around 1e-2, so the floor is still three decades below them).
    return [GradCase("CHS-Net_2stage_16x16", fn, x, net, 1, eps=NETWORK_EPS, kink_tol=KINK_TOL, floor=NETWORK_FLOOR)]


def all_cases(seed: int = 0) -> list[GradCase]:
    return op_cases(seed) + loss_cases(seed) + block_cases(seed) + network_cases(seed)


def check(case: GradCase, seed: int = 0) -> GradCheck:
    """Maximum relative error over the input and sampled parameter entries."""
    res = grad_check(case.fn, case.x, case.eps, case.floor, case.kink_tol)
    err, skipped, checked = float(res), res.skipped, res.checked
    if case.module is not None and case.entries_per_param:
        rng = np.random.default_rng(seed)
        x = Tensor(case.x)
        for _, p in case.module.named_parameters():
            idx = rng.choice(p.size, size=min(case.entries_per_param, p.size), replace=False)
            r = grad_check_param(lambda: case.fn(x), p, case.eps, idx, case.floor, case.kink_tol)
            err, skipped, checked = max(err, float(r)), skipped + r.skipped, checked + r.checked
    return GradCheck(err, skipped, checked)


def passed(result: GradCheck) -> bool:
    total = result.checked + result.skipped
    return float(result) < TOLERANCE and result.skipped <= MAX_KINK_FRACTION * max(total, 1)


def run_suite(seed: int = 0, cases: list[GradCase] | None = None, report=None) -> dict[str, GradCheck]:
    out = {}
    for case in cases if cases is not None else all_cases(seed):
        out[case.name] = check(case, seed)
        if report is not None:
            report(case.name, out[case.name])
    return out
