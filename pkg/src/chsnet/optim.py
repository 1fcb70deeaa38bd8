"""First-order optimizers updating parameter arrays in place."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .tensor import Tensor


class Optimizer:
    def __init__(self, params: list[Tensor], lr: float):
        if lr < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if not np.isfinite(p.grad).all():
                raise DivergenceError(f"non-finite gradient in parameter {i} (shape {p.shape})")
            self._update(i, p)

    def _update(self, i: int, p: Tensor) -> None:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class SGD(Optimizer):
    """Plain gradient descent, optionally with heavy-ball momentum."""

    def __init__(self, params, lr: float = 1e-2, momentum: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.velocity: dict[int, np.ndarray] = {}

    def _update(self, i, p):
        g = p.grad
        if self.momentum:
            v = self.velocity.setdefault(i, np.zeros_like(p.data))
            v *= self.momentum
            v += g
            g = v
        p.data -= (self.lr * g).astype(p.data.dtype, copy=False)


class Adam(Optimizer):
    """Adam with bias-corrected moment estimates."""

    def __init__(self, params, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}

    def step(self) -> None:
        self.t += 1
        super().step()

    def _update(self, i, p):
        g = p.grad
        m = self.m.setdefault(i, np.zeros_like(p.data))
        v = self.v.setdefault(i, np.zeros_like(p.data))
        m *= self.b1
        m += (1 - self.b1) * g
        v *= self.b2
        v += (1 - self.b2) * (g * g)
        mhat = m / (1 - self.b1 ** self.t)
        vhat = v / (1 - self.b2 ** self.t)
        p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype, copy=False)


OPTIMIZERS = {"adam": Adam, "sgd": SGD}


def build_optimizer(name: str, params, lr: float) -> Optimizer:
    if name not in OPTIMIZERS:
        raise ConfigurationError(f"optimizer must be one of {sorted(OPTIMIZERS)}, got {name!r}")
    return OPTIMIZERS[name](params, lr=lr)
