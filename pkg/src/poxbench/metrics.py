"""Confusion matrix, macro-averaged classification scores, Cohen's kappa and
fold aggregation.

Per-class precision/recall/F1 with a zero denominator count as 0 (with a
warning) instead of being dropped, so macro means stay comparable across
folds where a class is never predicted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import AggregationError, InputError, MetricsError, UndefinedKappaError

METRIC_NAMES = ("accuracy", "precision_macro", "recall_macro", "f1_macro", "kappa")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[t, p]``: samples with true class t predicted as p."""

    counts: np.ndarray
    classes: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise InputError(f"confusion counts must be square, got shape {c.shape}")
        if (c < 0).any():
            raise InputError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))
        if not self.classes:
            object.__setattr__(self, "classes", tuple(range(c.shape[0])))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    def per_class(self) -> dict[str, np.ndarray]:
        tp = np.diag(self.counts)
        return {
            "tp": tp,
            "fp": self.counts.sum(0) - tp,
            "fn": self.counts.sum(1) - tp,
            "tn": self.n - self.counts.sum(0) - self.counts.sum(1) + tp,
        }


@dataclass(frozen=True)
class MetricRecord:
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    kappa: float | None = None
    fold: int | None = None
    model: str = ""
    variant: str = ""
    split: str = "test"

    def with_context(self, **kw) -> MetricRecord:
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def confusion(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> ConfusionMatrix:
    t = np.asarray(y_true, dtype=np.int64).ravel()
    p = np.asarray(y_pred, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise InputError(f"y_true has {t.size} labels but y_pred has {p.size}")
    if n_classes < 1:
        raise InputError("n_classes must be >= 1")
    for name, v in (("y_true", t), ("y_pred", p)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise InputError(f"{name} contains labels outside 0..{n_classes - 1}")
    counts = np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    return ConfusionMatrix(counts)


def _safe_ratio(num: np.ndarray, den: np.ndarray, what: str, classes) -> np.ndarray:
    out = np.zeros(len(num))
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    if not ok.all():
        missing = [classes[i] for i in np.flatnonzero(~ok)]
        warnings.warn(f"{what} undefined for classes {missing}; scored as 0", RuntimeWarning, stacklevel=3)
    return out


def per_class_scores(m: ConfusionMatrix) -> dict[str, np.ndarray]:
    pc = m.per_class()
    tp, fp, fn = (pc[k].astype(np.float64) for k in ("tp", "fp", "fn"))
    precision = _safe_ratio(tp, tp + fp, "precision", m.classes)
    recall = _safe_ratio(tp, tp + fn, "recall", m.classes)
    denom = precision + recall
    f1 = np.zeros_like(denom)
    ok = denom > 0
    f1[ok] = 2.0 * precision[ok] * recall[ok] / denom[ok]
    return {"precision": precision, "recall": recall, "f1": f1}


def basic_metrics(m: ConfusionMatrix) -> MetricRecord:
    """Accuracy and macro precision/recall/F1; kappa is left unset."""
    if m.n == 0:
        raise MetricsError("cannot score an empty confusion matrix")
    s = per_class_scores(m)
    return MetricRecord(
        accuracy=float(np.trace(m.counts) / m.n),
        precision_macro=float(s["precision"].mean()),
        recall_macro=float(s["recall"].mean()),
        f1_macro=float(s["f1"].mean()),
    )


def cohens_kappa(m: ConfusionMatrix) -> float:
    n = m.n
    if n == 0:
        raise MetricsError("cannot compute kappa on an empty confusion matrix")
    # (po - pe) / (1 - pe) scaled through by n^2 so integer counts stay exact
    c = [[int(v) for v in row] for row in m.counts]
    rows = [sum(r) for r in c]
    cols = [sum(col) for col in zip(*c)]
    chance = sum(r * k for r, k in zip(rows, cols))
    observed = n * sum(c[i][i] for i in range(len(c)))
    if chance == n * n:
        raise UndefinedKappaError("expected agreement is 1 (all mass in one cell); kappa is undefined")
    return (observed - chance) / (n * n - chance)


def evaluate(y_true, y_pred, n_classes: int, **context) -> MetricRecord:
    m = confusion(y_true, y_pred, n_classes)
    return replace(basic_metrics(m), kappa=cohens_kappa(m), **context)


@dataclass(frozen=True)
class Aggregate:
    metric: str
    values: tuple
    mean: float
    sd: float
    se: float

    @property
    def k(self) -> int:
        return len(self.values)

    def format(self, spread: str = "sd") -> str:
        """Percent with two decimals, e.g. ``71.19% ± 1.71%``."""
        width = self.sd if spread == "sd" else self.se
        return f"{100 * self.mean:.2f}% ± {100 * width:.2f}%"


def summarize(values: Sequence[float], metric: str = "") -> Aggregate:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise AggregationError(f"need at least 2 values to aggregate {metric or 'a metric'}, got {v.size}")
    sd = float(v.std(ddof=1))
    return Aggregate(metric, tuple(float(x) for x in v), float(v.mean()), sd, sd / math.sqrt(v.size))


def aggregate(records: Sequence[MetricRecord]) -> dict[str, Aggregate]:
    """Mean, sample SD and SE = SD / sqrt(k) per metric over fold records."""
    if len(records) < 2:
        raise AggregationError(f"need at least 2 records to aggregate, got {len(records)}")
    out = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in records]
        if any(v is None for v in vals):
            continue
        out[name] = summarize(vals, name)
    return out
