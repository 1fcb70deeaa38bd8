"""Confusion-matrix scores for binary masks."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError

SCORES = ("accuracy", "precision", "specificity", "recall", "dice", "jaccard")


@dataclass(frozen=True)
class MetricsReport:
    """Counts and scores from one thresholded comparison.

    A score whose denominator is zero is reported as 0 and its name is listed
    in ``degenerate``.
    """

    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    precision: float
    specificity: float
    recall: float
    dice: float
    jaccard: float
    threshold: float = 0.5
    degenerate: tuple[str, ...] = field(default=())

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def scores(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in SCORES}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degenerate"] = list(self.degenerate)
        return d


def _ratio(num: int, den: int, name: str, degenerate: list[str]) -> float:
    if den == 0:
        degenerate.append(name)
        return 0.0
    return num / den


def report_from_counts(tp: int, tn: int, fp: int, fn: int, threshold: float = 0.5) -> MetricsReport:
    bad: list[str] = []
    return MetricsReport(
        tp=int(tp), tn=int(tn), fp=int(fp), fn=int(fn),
        accuracy=_ratio(tp + tn, tp + tn + fp + fn, "accuracy", bad),
        precision=_ratio(tp, tp + fp, "precision", bad),
        specificity=_ratio(tn, tn + fp, "specificity", bad),
        recall=_ratio(tp, tp + fn, "recall", bad),
        dice=_ratio(2 * tp, 2 * tp + fp + fn, "dice", bad),
        jaccard=_ratio(tp, tp + fp + fn, "jaccard", bad),
        threshold=float(threshold),
        degenerate=tuple(bad),
    )


def confusion_counts(y, p, threshold: float = 0.5) -> tuple[int, int, int, int]:
    """``(tp, tn, fp, fn)`` with predictions ``p >= threshold`` counted positive."""
    y = np.asarray(getattr(y, "data", y))
    p = np.asarray(getattr(p, "data", p))
    if y.shape != p.shape:
        raise ShapeError(f"target shape {y.shape} does not match prediction shape {p.shape}")
    truth = y > 0.5
    pred = p >= threshold
    tp = int(np.count_nonzero(truth & pred))
    fp = int(np.count_nonzero(pred)) - tp
    fn = int(np.count_nonzero(truth)) - tp
    tn = truth.size - tp - fp - fn
    return tp, tn, fp, fn


def compute_metrics(y, p, threshold: float = 0.5) -> MetricsReport:
    """Scores for binary target ``y`` against probabilities ``p``.

    All pixels of all images are pooled into one confusion matrix.
    """
    return report_from_counts(*confusion_counts(y, p, threshold), threshold=threshold)


class ConfusionAccumulator:
    """Running confusion matrix over several batches."""

    def __init__(self, threshold: float = 0.5):
        self.threshold = threshold
        self.counts = np.zeros(4, dtype=np.int64)

    def update(self, y, p) -> None:
        self.counts += confusion_counts(y, p, self.threshold)

    def report(self) -> MetricsReport:
        return report_from_counts(*(int(c) for c in self.counts), threshold=self.threshold)
