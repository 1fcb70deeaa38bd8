"""Parameter-holding layers and the small module system the network is built from."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import functional as F
from .errors import ConfigurationError
from .spectral import hybrid_pool
from .tensor import DEFAULT_DTYPE, Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class Context:
    """Per-forward switches.

    ``training`` selects batch statistics in batch norm (and updates the running
    ones); ``dropout`` is the rate applied by :class:`Dropout` layers, drawn
    from ``rng``.
    """

    training: bool = False
    dropout: float = 0.0
    rng: np.random.Generator | None = field(default=None, repr=False)

    @classmethod
    def infer(cls) -> "Context":
        return cls()

    @classmethod
    def train(cls, dropout: float = 0.0, seed: int | None = 0) -> "Context":
        return cls(training=True, dropout=dropout, rng=np.random.default_rng(seed))


INFER = Context()


class Module:
    """Ordered container of parameters, buffers and child modules."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def forward(self, x: Tensor, ctx: Context = INFER) -> Tensor:
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Init:
    """He-normal weights from a seeded generator; every layer draws in build order."""

    def __init__(self, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)

    def he(self, shape: tuple[int, ...], fan_in: int) -> Tensor:
        w = self.rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        return Tensor(w.astype(self.dtype), requires_grad=True)

    def zeros(self, shape) -> Tensor:
        return Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)

    def ones(self, shape) -> Tensor:
        return Tensor(np.ones(shape, dtype=self.dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, init: Init, d: int, r: int, f: int = 1, stride: int = 1, padding: int | str = 0, bias: bool = True):
        super().__init__()
        if min(d, r, f) < 1:
            raise ConfigurationError(f"invalid conv dims d={d} r={r} f={f}")
        self.f, self.d, self.r, self.stride = f, d, r, stride
        self.padding = padding_for(f, padding)
        self.weight = init.he((f, f, d, r), f * f * d)
        self.bias = init.zeros((r,)) if bias else None

    def forward(self, x, ctx=INFER):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


def padding_for(f: int, padding: int | str) -> int:
    """'same' is floor(f/2) (stride 1), 'valid' is 0."""
    if padding == "same":
        return f // 2
    if padding == "valid":
        return 0
    if isinstance(padding, int) and padding >= 0:
        return padding
    raise ConfigurationError(f"bad padding {padding!r}")


class DepthwiseSeparableConv(Module):
    """Per-channel ``f x f`` filter followed by a biased 1x1 channel mixer."""

    def __init__(self, init: Init, d: int, r: int, f: int = 3, stride: int = 1, padding: int | str = "same"):
        super().__init__()
        if min(d, r, f) < 1:
            raise ConfigurationError(f"invalid DSC dims d={d} r={r} f={f}")
        self.f, self.d, self.r, self.stride = f, d, r, stride
        self.padding = padding_for(f, padding)
        self.depthwise = init.he((f, f, d), f * f)
        self.pointwise = init.he((1, 1, d, r), d)
        self.bias = init.zeros((r,))

    def forward(self, x, ctx=INFER):
        y = F.depthwise_conv2d(x, self.depthwise, self.stride, self.padding)
        return F.conv2d(y, self.pointwise, self.bias)


class TransposedConv2d(Module):
    def __init__(self, init: Init, d: int, r: int, stride: int = 2):
        super().__init__()
        f = 2
        self.stride = stride
        self.weight = init.he((f, f, d, r), d)
        self.bias = init.zeros((r,))

    def forward(self, x, ctx=INFER):
        return F.transposed_conv2d(x, self.weight, self.bias, self.stride)


class BatchNorm(Module):
    def __init__(self, init: Init, c: int):
        super().__init__()
        self.gamma = init.ones((c,))
        self.beta = init.zeros((c,))
        self.register_buffer("running_mean", np.zeros(c, dtype=init.dtype))
        self.register_buffer("running_var", np.ones(c, dtype=init.dtype))

    def forward(self, x, ctx=INFER):
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            ctx.training, BN_MOMENTUM, BN_EPS,
        )


class ConvBNReLU(Module):
    """Standard or depthwise-separable conv, then BN, then ReLU."""

    def __init__(self, init: Init, d: int, r: int, f: int, separable: bool):
        super().__init__()
        conv_cls = DepthwiseSeparableConv if separable else Conv2d
        self.conv = conv_cls(init, d, r, f, padding="same")
        self.bn = BatchNorm(init, r)

    def forward(self, x, ctx=INFER):
        return F.relu(self.bn(self.conv(x), ctx))


class HybridPool(Module):
    """Spectral + max pooling mixed by a learned 1x1 convolution."""

    def __init__(self, init: Init, d: int, d_out: int, mode: str):
        super().__init__()
        if mode not in ("valid", "same"):
            raise ConfigurationError(f"hybrid pool mode must be 'valid' or 'same', got {mode!r}")
        self.mode = mode
        self.weight = init.he((1, 1, 2 * d, d_out), 2 * d)
        self.bias = init.zeros((d_out,))

    def forward(self, x, ctx=INFER):
        return hybrid_pool(x, self.mode, self.weight, self.bias)


class MaxPool(Module):
    def __init__(self, window: int = 2, stride: int = 2, padding: str = "valid"):
        super().__init__()
        self.window, self.stride, self.padding = window, stride, padding

    def forward(self, x, ctx=INFER):
        return F.max_pool2d(x, self.window, self.stride, self.padding)


class Dropout(Module):
    """Active only when the context carries a nonzero rate."""

    def forward(self, x, ctx=INFER):
        if ctx.dropout > 0:
            if ctx.rng is None:
                raise ConfigurationError("dropout requested without a random generator")
            return F.dropout(x, ctx.dropout, ctx.rng)
        return x
