"""Semantic segmentation metrics over a (C+1) x (C+1) confusion matrix.

Rows are ground-truth labels, columns predictions; index C is the background
label and ignore pixels are never counted. Counts are int64, so accumulation
is exact; derived ratios are float64. Classes absent from both ground truth
and prediction carry NaN and are excluded from means.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .types import LabelMap, LabelOutOfRange, ShapeMismatch


@dataclass
class ConfusionMatrix:
    """Pixel counts: counts[gt_label, pred_label], background included as C."""

    num_classes: int
    counts: np.ndarray = field(default=None)  # (C+1, C+1) int64

    def __post_init__(self) -> None:
        n = self.num_classes + 1
        if self.counts is None:
            self.counts = np.zeros((n, n), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (n, n):
                raise ShapeMismatch(
                    f"counts shape {self.counts.shape} != {(n, n)} for C={self.num_classes}"
                )

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _check_pair(cm: ConfusionMatrix, pred: LabelMap, gt: LabelMap) -> None:
    if pred.values.shape != gt.values.shape:
        raise ShapeMismatch(f"pred shape {pred.values.shape} != gt shape {gt.values.shape}")
    if pred.num_classes != cm.num_classes or gt.num_classes != cm.num_classes:
        raise LabelOutOfRange(
            f"label maps carry {pred.num_classes}/{gt.num_classes} classes, "
            f"matrix expects {cm.num_classes}"
        )


def accumulate(
    cm: ConfusionMatrix,
    pred: LabelMap,
    gt: LabelMap,
    select: np.ndarray | None = None,
) -> ConfusionMatrix:
    """Count cm[gt[p], pred[p]] for every pixel with gt[p] != IGNORE.

    An optional boolean `select` grid restricts counting further (used by the
    boundary-distance stratification). Mutates and returns cm.
    """
    _check_pair(cm, pred, gt)
    counted = gt.values != gt.ignore_value
    if select is not None:
        if select.shape != gt.values.shape:
            raise ShapeMismatch(f"select shape {select.shape} != {gt.values.shape}")
        counted &= select
    p = pred.values[counted]
    if p.size and (p == pred.ignore_value).any():
        raise LabelOutOfRange("pred contains IGNORE at a counted pixel")
    g = gt.values[counted]
    n = cm.num_classes + 1
    binned = np.bincount(g.astype(np.int64) * n + p.astype(np.int64), minlength=n * n)
    cm.counts += binned.reshape(n, n)
    return cm


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    """Sum two matrices; associative and commutative, so per-image matrices
    can be reduced in any order."""
    if a.num_classes != b.num_classes:
        raise ShapeMismatch("cannot merge matrices with different class counts")
    return ConfusionMatrix(num_classes=a.num_classes, counts=a.counts + b.counts)


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """iou[c] = counts[c, c] / (row_sum[c] + col_sum[c] - counts[c, c]).

    Classes with a zero denominator (never in gt nor predicted) come back NaN.
    """
    counts = cm.counts.astype(np.float64)
    diag = np.diag(counts)
    denom = counts.sum(axis=1) + counts.sum(axis=0) - diag
    with np.errstate(invalid="ignore"):
        return np.where(denom > 0, diag / denom, np.nan)


def acc_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class recall: counts[c, c] / row_sum[c]; NaN when absent from gt."""
    counts = cm.counts.astype(np.float64)
    diag = np.diag(counts)
    row = counts.sum(axis=1)
    with np.errstate(invalid="ignore"):
        return np.where(row > 0, diag / row, np.nan)


def _mean_present(values: np.ndarray, include_background: bool) -> float:
    sel = values if include_background else values[:-1]
    present = sel[~np.isnan(sel)]
    if present.size == 0:
        return float("nan")
    return float(np.sum(present) / present.size)


def miou(cm: ConfusionMatrix, include_background: bool = True) -> float:
    """Mean IOU over present classes (background row optionally excluded)."""
    return _mean_present(iou_per_class(cm), include_background)


def macc(cm: ConfusionMatrix, include_background: bool = True) -> float:
    """Mean per-class recall over classes present in ground truth."""
    return _mean_present(acc_per_class(cm), include_background)
