"""Training loop with early stopping, evaluation and k-fold cross-validation.

History records are written one per line as space-separated ``key=value``
pairs, for example::

    epoch=3 split=val loss=0.41 accuracy=0.97 precision=0.81 ... jaccard=0.66

Floats use ``repr`` so a history file is byte-identical across identical runs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .data import SegmentationSample, stack
from .errors import ConfigurationError, DivergenceError, NonFiniteError
from .losses import REDUCTIONS, cascade_loss
from .metrics import SCORES, ConfusionAccumulator, MetricsReport
from .nn import INFER, Context, Module
from .optim import OPTIMIZERS, build_optimizer
from .tensor import Tape, Tensor


@dataclass
class TrainConfig:
    """Optimisation settings.

    ``dropout_rate`` is applied while training; MC-dropout sampling uses the
    network's own rate.  ``kfold`` of ``None`` trains once on the given split.
    """

    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-3
    early_stop_patience: int = 5
    seed: int = 0
    loss_reduction: str = "mean"
    mc_samples: int = 20
    dropout_rate: float = 0.0
    kfold: int | None = None
    optimizer: str = "adam"
    threshold: float = 0.5
    check_finite: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("epochs", "batch_size", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.loss_reduction not in REDUCTIONS:
            raise ConfigurationError(f"loss_reduction must be one of {REDUCTIONS}")
        if self.mc_samples < 2:
            raise ConfigurationError("mc_samples must be >= 2")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigurationError("dropout_rate must be in [0, 1)")
        if self.kfold is not None and self.kfold < 2:
            raise ConfigurationError("kfold must be >= 2 when set")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {sorted(OPTIMIZERS)}")
        if not 0 < self.threshold < 1:
            raise ConfigurationError("threshold must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class HistoryRecord:
    epoch: int
    split: str
    loss: float
    metrics: MetricsReport

    def to_line(self) -> str:
        parts = [f"epoch={self.epoch}", f"split={self.split}", f"loss={self.loss!r}"]
        parts += [f"{k}={v!r}" for k, v in self.metrics.scores().items()]
        return " ".join(parts)


def parse_history_line(line: str) -> dict:
    out: dict = {}
    for tok in line.split():
        k, v = tok.split("=", 1)
        out[k] = v if k == "split" else (int(v) if k == "epoch" else float(v))
    return out


def read_history(path: str | Path) -> list[dict]:
    return [parse_history_line(l) for l in Path(path).read_text().splitlines() if l.strip()]


@dataclass
class TrainResult:
    model: Module
    history: list[HistoryRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def val_losses(self) -> list[float]:
        return [r.loss for r in self.history if r.split == "val"]


@dataclass
class EvalResult:
    loss: float
    infection: MetricsReport
    lung: MetricsReport | None = None


# ---------------------------------------------------------------- helpers

def _dtype(model: Module):
    return np.dtype(getattr(model.cfg, "dtype", "float64"))


def predict(model: Module, images: np.ndarray, batch_size: int = 16, ctx: Context = INFER):
    """``(lung, infection)`` probability arrays for a stack of images.

    ``lung`` is ``None`` for single-net models.
    """
    dt = _dtype(model)
    lungs, infs = [], []
    for start in range(0, len(images), batch_size):
        lung, inf = model(Tensor(images[start:start + batch_size].astype(dt)), ctx)
        infs.append(inf.data)
        if lung is not None:
            lungs.append(lung.data)
    return (np.concatenate(lungs) if lungs else None), np.concatenate(infs)


def evaluate(model: Module, samples: list[SegmentationSample], batch_size: int = 16,
             threshold: float = 0.5, reduction: str = "mean") -> EvalResult:
    """Inference-mode loss (mean over batches, weighted by size) and pooled metrics."""
    if not samples:
        raise ConfigurationError("cannot evaluate on an empty split")
    dt = _dtype(model)
    X, L, I = stack(samples, dt)
    inf_acc, lung_acc = ConfusionAccumulator(threshold), ConfusionAccumulator(threshold)
    total, has_lung = 0.0, False
    for start in range(0, len(X), batch_size):
        sl = slice(start, start + batch_size)
        out = model(Tensor(X[sl]), INFER)
        total += cascade_loss(out, L[sl], I[sl], reduction).item() * len(X[sl])
        inf_acc.update(I[sl], out[1].data)
        if out[0] is not None:
            has_lung = True
            lung_acc.update(L[sl], out[0].data)
    return EvalResult(total / len(X), inf_acc.report(), lung_acc.report() if has_lung else None)


def snapshot(model: Module) -> list[np.ndarray]:
    return [p.data.copy() for p in model.parameters()] + [b.copy() for _, b in model.named_buffers()]


def restore(model: Module, state: list[np.ndarray]) -> None:
    arrays = [p.data for p in model.parameters()] + [b for _, b in model.named_buffers()]
    for dst, src in zip(arrays, state):
        dst[...] = src


# ------------------------------------------------------------------- train

Evaluator = Callable[[Module], EvalResult]


def train_epoch(model: Module, X, L, I, cfg: TrainConfig, optimizer, order_rng, dropout_rng):
    """One pass over the training arrays in a seeded order; returns (mean loss, metrics)."""
    acc = ConfusionAccumulator(cfg.threshold)
    ctx = Context(training=True, dropout=cfg.dropout_rate, rng=dropout_rng)
    params = optimizer.params
    order = order_rng.permutation(len(X))
    total = 0.0
    for start in range(0, len(order), cfg.batch_size):
        idx = np.sort(order[start:start + cfg.batch_size])
        optimizer.zero_grad()
        try:
            with Tape() as tape:
                out = model(Tensor(X[idx]), ctx)
                loss = cascade_loss(out, L[idx], I[idx], cfg.loss_reduction)
        except NonFiniteError as exc:
            raise DivergenceError(f"non-finite values in the forward pass: {exc}") from exc
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"training loss became {value}")
        tape.backward(loss, params)
        optimizer.step()
        total += value * len(idx)
        acc.update(I[idx], out[1].data)
    return total / len(X), acc.report()


def train(
    model: Module,
    train_samples: list[SegmentationSample],
    val_samples: list[SegmentationSample],
    cfg: TrainConfig,
    evaluator: Evaluator | None = None,
    history_path: str | Path | None = None,
) -> TrainResult:
    """Minimise the cascade loss with early stopping on validation loss.

    Training stops after ``cfg.epochs`` epochs or once the validation loss has
    not strictly improved for ``cfg.early_stop_patience`` consecutive epochs;
    the weights of the best validation epoch are restored.  ``evaluator``
    replaces the validation pass (used to stub the stopping mechanism).
    """
    if not train_samples:
        raise ConfigurationError("training split is empty")
    if evaluator is None and not val_samples:
        raise ConfigurationError("validation split is empty")
    dt = _dtype(model)
    X, L, I = stack(train_samples, dt)
    if evaluator is None:
        def evaluator(m):
            return evaluate(m, val_samples, cfg.batch_size, cfg.threshold, cfg.loss_reduction)

    order_seq, drop_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    order_rng, dropout_rng = np.random.default_rng(order_seq), np.random.default_rng(drop_seq)
    optimizer = build_optimizer(cfg.optimizer, model.parameters(), cfg.learning_rate)
    result = TrainResult(model)
    best, best_state, stale = math.inf, None, 0
    fh = open(history_path, "w") if history_path is not None else None
    saved_check = T.CHECK_FINITE
    T.CHECK_FINITE = cfg.check_finite
    try:
        for epoch in range(1, cfg.epochs + 1):
            loss, report = train_epoch(model, X, L, I, cfg, optimizer, order_rng, dropout_rng)
            val = evaluator(model)
            if not math.isfinite(val.loss):
                raise DivergenceError(f"validation loss became {val.loss} at epoch {epoch}")
            for rec in (HistoryRecord(epoch, "train", loss, report), HistoryRecord(epoch, "val", val.loss, val.infection)):
                result.history.append(rec)
                if fh is not None:
                    fh.write(rec.to_line() + "\n")
                    fh.flush()
            if val.loss < best:
                best, best_state, stale = val.loss, snapshot(model), 0
                result.best_epoch = epoch
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    result.stopped_early = True
                    break
    finally:
        T.CHECK_FINITE = saved_check
        if fh is not None:
            fh.close()
    if best_state is not None:
        restore(model, best_state)
    return result


@dataclass
class FoldResult:
    fold: int
    result: TrainResult
    evaluation: EvalResult


def kfold_indices(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    """Seeded permutation of ``range(n)`` cut into ``k`` nearly equal folds."""
    if not 2 <= k <= n:
        raise ConfigurationError(f"need 2 <= k <= n, got k={k}, n={n}")
    return np.array_split(np.random.default_rng(seed).permutation(n), k)


def cross_validate(build: Callable[[], Module], samples: list[SegmentationSample], cfg: TrainConfig) -> list[FoldResult]:
    """Train a fresh model per fold, validating (and early stopping) on the held-out fold."""
    k = cfg.kfold or 5
    folds = kfold_indices(len(samples), k, cfg.seed)
    out = []
    for i, held in enumerate(folds):
        held_set = set(held.tolist())
        val = [samples[j] for j in sorted(held_set)]
        tr = [s for j, s in enumerate(samples) if j not in held_set]
        res = train(build(), tr, val, cfg)
        out.append(FoldResult(i, res, evaluate(res.model, val, cfg.batch_size, cfg.threshold, cfg.loss_reduction)))
    return out
