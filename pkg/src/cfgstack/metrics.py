"""Binary classification metrics with the malicious class as positive.

Zero-denominator ratios resolve to 0 and set a warning flag instead of
producing NaN.  ROC/AUC uses descending unique score thresholds with
tied scores crossing all at once; AUC is the trapezoidal area, which
equals the normalized pairwise-comparison statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LABEL_BENIGN = 0
LABEL_MALICIOUS = 1


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self) -> "ConfusionCounts":
        """Counts with the positive class flipped (benign as positive)."""
        return ConfusionCounts(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)


def confusion(predictions, labels) -> ConfusionCounts:
    preds = np.asarray(predictions, dtype=np.int64).ravel()
    labs = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape[0] != labs.shape[0]:
        raise ValueError("predictions/labels length mismatch")
    if preds.shape[0] == 0:
        raise ValueError("need at least one sample")
    return ConfusionCounts(
        tp=int(np.sum((preds == 1) & (labs == 1))),
        tn=int(np.sum((preds == 0) & (labs == 0))),
        fp=int(np.sum((preds == 1) & (labs == 0))),
        fn=int(np.sum((preds == 0) & (labs == 1))))


@dataclass(frozen=True)
class Prf1:
    precision: float
    recall: float
    f1: float
    zero_division: bool = False


def prf1(counts: ConfusionCounts, positive_class: int = LABEL_MALICIOUS) -> Prf1:
    c = counts if positive_class == LABEL_MALICIOUS else counts.swapped()
    warned = False
    if c.tp + c.fp == 0:
        precision, warned = 0.0, True
    else:
        precision = c.tp / (c.tp + c.fp)
    if c.tp + c.fn == 0:
        recall, warned = 0.0, True
    else:
        recall = c.tp / (c.tp + c.fn)
    if precision + recall == 0.0:
        f1, warned = 0.0, True
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return Prf1(precision=precision, recall=recall, f1=f1, zero_division=warned)


def accuracy(counts: ConfusionCounts) -> float:
    return (counts.tp + counts.tn) / counts.total


def roc_auc(scores, labels) -> tuple[float, list[tuple[float, float]]]:
    """AUC and ROC points from malicious-class probabilities.

    Thresholds sweep the descending unique scores; all samples sharing
    a score cross together, so ties contribute a diagonal segment whose
    trapezoid equals the half-credit pairwise convention.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if s.shape[0] != y.shape[0]:
        raise ValueError("scores/labels length mismatch")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = s.shape[0]
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        tp += int(np.sum(y_sorted[i:j] == 1))
        fp += int(np.sum(y_sorted[i:j] == 0))
        points.append((fp / n_neg, tp / n_pos))
        i = j
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return auc, points


@dataclass
class EvalReport:
    """Per-model test metrics, one class section per row in CSV form."""

    model: str
    counts: ConfusionCounts
    malicious: Prf1
    benign: Prf1
    accuracy: float
    auc: float
    roc_points: list[tuple[float, float]] = field(default_factory=list)

    @property
    def zero_division(self) -> bool:
        return self.malicious.zero_division or self.benign.zero_division


def evaluate_model(model_tag: str, predictions, labels, scores) -> EvalReport:
    counts = confusion(predictions, labels)
    auc, points = roc_auc(scores, labels)
    return EvalReport(model=model_tag, counts=counts,
                      malicious=prf1(counts, LABEL_MALICIOUS),
                      benign=prf1(counts, LABEL_BENIGN),
                      accuracy=accuracy(counts), auc=auc, roc_points=points)


EVAL_CSV_HEADER = ("model", "class", "precision", "recall", "f1",
                   "accuracy", "auc", "zero_division")


def eval_csv_rows(report: EvalReport) -> list[tuple]:
    rows = []
    for cls_name, stats in (("benign", report.benign),
                            ("malicious", report.malicious)):
        rows.append((report.model, cls_name, stats.precision, stats.recall,
                     stats.f1, report.accuracy, report.auc,
                     int(stats.zero_division)))
    return rows
