"""Confusion matrix, the standard binary metrics, and ROC/AUC.

A flagged frame is a prediction of "attacked". With ``positive_class="clean"``
the roles of the two classes swap.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyMatrix, SingleClass, UnknownTruth
from .pipeline import DetectionRecord

CLASSES = ("attacked", "clean")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    positive_class: str = "attacked"

    def __post_init__(self):
        if self.positive_class not in CLASSES:
            raise ValueError(f"positive_class must be one of {CLASSES}")
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swapped(self) -> "ConfusionMatrix":
        other = CLASSES[1 - CLASSES.index(self.positive_class)]
        return ConfusionMatrix(self.tn, self.fn, self.tp, self.fp, other)

    def as_attacked(self) -> "ConfusionMatrix":
        return self if self.positive_class == "attacked" else self.swapped()


@dataclass(frozen=True)
class MetricsReport:
    err: float
    acc: float
    sn: float
    sp: float
    prec: float
    fpr: float
    f1: float
    auc: float | None = None
    degenerate: bool = False


def confusion(records: Sequence[DetectionRecord], positive_class: str = "attacked") -> ConfusionMatrix:
    if positive_class not in CLASSES:
        raise ValueError(f"positive_class must be one of {CLASSES}, got {positive_class!r}")
    tp = fp = tn = fn = 0
    for r in records:
        if r.truth not in CLASSES:
            raise UnknownTruth(r.frame_index)
        actual = r.truth == "attacked"
        if actual and r.flagged:
            tp += 1
        elif actual:
            fn += 1
        elif r.flagged:
            fp += 1
        else:
            tn += 1
    cm = ConfusionMatrix(tp, fp, tn, fn, "attacked")
    return cm if positive_class == "attacked" else cm.swapped()


def _ratio(num: int, den: int, empty: float) -> tuple[float, bool]:
    return (num / den, False) if den else (empty, True)


def metrics(cm: ConfusionMatrix, auc: float | None = None) -> MetricsReport:
    """All seven measures; a 0/0 ratio is reported as 1.0 (0.0 for FPR) with ``degenerate``."""
    total = cm.total
    if total == 0:
        raise EmptyMatrix("confusion matrix has no records")
    sn, d1 = _ratio(cm.tp, cm.tp + cm.fn, 1.0)
    sp, d2 = _ratio(cm.tn, cm.tn + cm.fp, 1.0)
    prec, d3 = _ratio(cm.tp, cm.tp + cm.fp, 1.0)
    fpr, d4 = _ratio(cm.fp, cm.tn + cm.fp, 0.0)
    f1 = 2 * prec * sn / (prec + sn) if prec + sn > 0 else 0.0
    return MetricsReport(
        err=(cm.fp + cm.fn) / total,
        acc=(cm.tp + cm.tn) / total,
        sn=sn, sp=sp, prec=prec, fpr=fpr, f1=f1, auc=auc,
        degenerate=d1 or d2 or d3 or d4,
    )


def roc(records: Sequence[DetectionRecord]) -> tuple[list[tuple[float, float]], float]:
    """ROC points (fpr, tpr) for "attacked" as positive, sweeping distinct scores downward.

    Tied scores move the curve diagonally in one step; the area is the
    trapezoid sum.
    """
    labelled = [r for r in records if r.truth in CLASSES]
    y = np.array([r.truth == "attacked" for r in labelled])
    s = np.array([r.score for r in labelled], dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both attacked and clean records")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        tp += int(y[i:j].sum())
        fp += int((j - i) - y[i:j].sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, auc


def metrics_json(cm: ConfusionMatrix, report: MetricsReport) -> dict:
    body = {"positive_class": cm.positive_class, "tp": cm.tp, "fp": cm.fp, "tn": cm.tn,
            "fn": cm.fn}
    fields = asdict(report)
    for key in ("err", "acc", "sn", "sp", "prec", "fpr", "f1", "auc"):
        body[key] = fields[key]
    body["degenerate"] = report.degenerate
    return body


def write_metrics(cm: ConfusionMatrix, report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(metrics_json(cm, report), indent=2) + "\n", encoding="utf-8")


def evaluate(records: Sequence[DetectionRecord], positive_class: str = "attacked"
             ) -> tuple[ConfusionMatrix, MetricsReport]:
    cm = confusion(records, positive_class)
    try:
        _, auc = roc(records)
    except SingleClass:
        auc = None
    return cm, metrics(cm, auc)
