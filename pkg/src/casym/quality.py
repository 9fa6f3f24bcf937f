"""Segmentation quality metrics (Dice, IoU, precision, recall, accuracy) with SE.

All metrics follow the 0/0 -> 1.0 convention for empty-denominator cases
(an empty prediction against an empty ground truth is a perfect match);
:func:`metric_flags` reports which metrics hit that case.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

METRIC_NAMES = ("dice", "iou", "precision", "recall", "accuracy")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred_probs: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> ConfusionCounts:
    """Pixel confusion counts from probabilities thresholded against a binary mask."""
    if pred_probs.shape != gt.shape:
        raise DataError(f"prediction shape {pred_probs.shape} != mask shape {gt.shape}")
    if not 0.0 < threshold < 1.0:
        raise DataError(f"threshold must lie in (0,1), got {threshold}")
    pred = np.asarray(pred_probs) >= threshold
    pos = np.asarray(gt) != 0
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num: int, den: int) -> float:
    return 1.0 if den == 0 else num / den


def dice(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def iou(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn)


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.total)


_METRIC_FNS = {
    "dice": dice,
    "iou": iou,
    "precision": precision,
    "recall": recall,
    "accuracy": accuracy,
}


def metric_flags(c: ConfusionCounts) -> list[str]:
    """Names of metrics whose denominator was empty (0/0 reported as 1.0)."""
    flagged = []
    if 2 * c.tp + c.fp + c.fn == 0:
        flagged += ["dice", "iou"]
    if c.tp + c.fp == 0:
        flagged.append("precision")
    if c.tp + c.fn == 0:
        flagged.append("recall")
    return flagged


def score(metric: str, c: ConfusionCounts) -> float:
    try:
        return _METRIC_FNS[metric](c)
    except KeyError:
        raise DataError(f"unknown metric {metric!r}; choose from {METRIC_NAMES}") from None


@dataclass
class ScoreSummary:
    scores: list[float]
    mean: float
    se: float
    flags: list[str] = field(default_factory=list)


def summarize(per_image: list[float]) -> ScoreSummary:
    """Mean and standard error (sample stddev / sqrt(M)) over per-image scores."""
    if not per_image:
        raise DataError("cannot summarize an empty score list")
    arr = np.asarray(per_image, dtype=np.float64)
    if len(arr) == 1:
        return ScoreSummary(scores=list(map(float, arr)), mean=float(arr[0]), se=0.0,
                            flags=["single_image"])
    sd = float(arr.std(ddof=1))
    return ScoreSummary(
        scores=list(map(float, arr)),
        mean=float(arr.mean()),
        se=sd / np.sqrt(len(arr)),
    )
