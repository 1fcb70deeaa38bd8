"""Dense tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active, and whose inputs require
gradients, are appended to that tape in execution order.  Calling
:meth:`Tape.backward` walks the records in reverse and accumulates
``d loss / d tensor`` into each tensor's ``grad`` slot.  Outside a tape nothing
is recorded, which is what inference uses.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError

DEFAULT_DTYPE = np.float64

# Checking finiteness costs one pass per op; training may switch it off.
CHECK_FINITE = True

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-dimensional real array, channels-last, with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; the implementations live in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F
        return F.div(other, self)

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def sum(self, axis=None, keepdims: bool = False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager around the forward pass::

        with Tape() as tape:
            loss = model_loss(x)
        tape.backward(loss, params)
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse across threads
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Backward) -> None:
        self.records.append(_Record(out, inputs, backward))

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        backward(self, loss, params)


def make(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Backward) -> Tensor:
    """Wrap an op result, recording it on the active tape when it needs a gradient."""
    if CHECK_FINITE and not np.isfinite(out_data).all():
        raise NonFiniteError(f"non-finite values produced (shape {np.shape(out_data)})")
    out = Tensor(out_data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, tuple(inputs), backward)
    return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Populate ``grad`` on every tensor reachable from ``loss`` through ``tape``.

    Tensors in ``params`` that the loss does not depend on receive a zero
    gradient.  Gradients accumulate, so call ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params)
    if loss.requires_grad:
        # intermediates are reset so a tape can be replayed safely
        for rec in tape.records:
            rec.out.grad = None
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(tape.records):
            g = rec.out.grad
            if g is None:
                continue
            grads = rec.backward(g)
            for t, gi in zip(rec.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.data.shape:
                    gi = gi.reshape(t.data.shape)
                if t.grad is None:
                    t.grad = np.array(gi, dtype=t.data.dtype, copy=True)
                else:
                    t.grad += gi
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# Gradients below this magnitude are compared on an absolute scale.  Entries
# that are exactly zero (a bias feeding batch norm, say) otherwise turn the
# rounding noise of the finite difference, about ulp(f) / eps, into a large
# "relative" error.
GRAD_FLOOR = 1e-6


class GradCheck(float):
    """Maximum relative error (the float value) plus the count of skipped kink entries."""

    skipped: int
    checked: int

    def __new__(cls, error: float, skipped: int = 0, checked: int = 0):
        obj = super().__new__(cls, error)
        obj.skipped, obj.checked = skipped, checked
        return obj


def _differences(evaluate: Callable[[], float], flat: np.ndarray, idx, eps: float,
                 kink_tol: float | None) -> tuple[np.ndarray, np.ndarray]:
    """Central differences over ``flat[idx]`` and a mask of entries straddling a kink.

    With ``kink_tol`` set, an entry whose forward and backward one-sided
    quotients differ by more than ``kink_tol`` (relative) is flagged: the step
    crossed a ReLU or max switch, where no derivative exists.
    """
    f0 = evaluate() if kink_tol is not None else 0.0
    numeric = np.empty(len(idx))
    kink = np.zeros(len(idx), dtype=bool)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        hi = evaluate()
        flat[i] = orig - eps
        lo = evaluate()
        flat[i] = orig
        numeric[n] = (hi - lo) / (2 * eps)
        if kink_tol is not None:
            fwd, bwd = (hi - f0) / eps, (f0 - lo) / eps
            kink[n] = abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), GRAD_FLOOR)
    return numeric, kink


def _compare(analytic, numeric, kink, floor) -> GradCheck:
    keep = ~kink
    a, n = analytic[keep], numeric[keep]
    if a.size == 0:
        return GradCheck(0.0, int(kink.sum()), 0)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return GradCheck(float(np.max(np.abs(a - n) / denom)), int(kink.sum()), int(a.size))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor | np.ndarray, eps: float = 1e-5,
               floor: float = GRAD_FLOOR, kink_tol: float | None = None) -> GradCheck:
    """Maximum relative error between the tape gradient of ``f`` and central differences.

    ``f`` maps a tensor to a scalar tensor.  The error per element is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.  With
    ``kink_tol`` set, entries whose difference stencil crosses a kink are
    excluded and counted in ``.skipped``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64, copy=True)

    probe = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(probe)
    if out.data.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    tape.backward(out, [probe])
    analytic = probe.grad.reshape(-1)

    flat = base.reshape(-1)
    numeric, kink = _differences(lambda: f(Tensor(base.copy())).item(), flat, range(flat.size), eps, kink_tol)
    return _compare(analytic, numeric, kink, floor)


def grad_check_param(
    loss_fn: Callable[[], Tensor],
    param: Tensor,
    eps: float = 1e-5,
    entries: Sequence[int] | None = None,
    floor: float = GRAD_FLOOR,
    kink_tol: float | None = None,
) -> GradCheck:
    """Like :func:`grad_check` but for a parameter used inside ``loss_fn``.

    ``param.data`` is perturbed in place (and restored).  ``entries`` limits
    the check to those flat indices, which keeps large models affordable.
    """
    if param.data.dtype != np.float64:
        raise ContractError("parameter gradient checks need float64 parameters")
    param.grad = None
    with Tape() as tape:
        out = loss_fn()
    if out.data.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    tape.backward(out, [param])
    analytic_all = param.grad.reshape(-1).copy()
    param.grad = None
    flat = param.data.reshape(-1)
    idx = np.arange(flat.size) if entries is None else np.asarray(entries, dtype=int)
    numeric, kink = _differences(lambda: loss_fn().item(), flat, idx, eps, kink_tol)
    return _compare(analytic_all[idx], numeric, kink, floor)
