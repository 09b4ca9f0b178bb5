"""Segmentation metrics: per-image Dice, IoU, and MAE, plus dataset means.

Dice and IoU work on masks binarized at 0.5 and are computed with integer
pixel counts, so results are exact rational values; empty-vs-empty pairs
score 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

THRESHOLD = 0.5


def _binarize(pred: np.ndarray) -> np.ndarray:
    return pred > THRESHOLD


def _check_shapes(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"metric operands differ: {a.shape} vs {b.shape}")


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """2|P∩G| / (|P|+|G|), with 0/0 := 1."""
    _check_shapes(pred, gt)
    p = _binarize(np.asarray(pred))
    g = np.asarray(gt) > THRESHOLD
    inter = int(np.count_nonzero(p & g))
    total = int(np.count_nonzero(p)) + int(np.count_nonzero(g))
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """|P∩G| / |P∪G|, with 0/0 := 1."""
    _check_shapes(pred, gt)
    p = _binarize(np.asarray(pred))
    g = np.asarray(gt) > THRESHOLD
    inter = int(np.count_nonzero(p & g))
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    return inter / union


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute pixel error of the probabilistic prediction."""
    _check_shapes(pred, gt)
    return float(np.mean(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))))


@dataclass
class MetricReport:
    ids: list[str]
    dice: list[float]
    iou: list[float]
    mae: list[float]
    threshold: float = THRESHOLD

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.dice))

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.iou))

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.mae))


def evaluate_pairs(ids, preds, gts) -> MetricReport:
    """Score each (prediction, mask) pair; means are per-image averages."""
    report = MetricReport(ids=list(ids), dice=[], iou=[], mae=[])
    for p, g in zip(preds, gts):
        report.dice.append(dice(p, g))
        report.iou.append(iou(p, g))
        report.mae.append(mae(p, g))
    return report
