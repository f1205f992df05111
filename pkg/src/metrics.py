"""
Classification metrics for mTBI-BoW (mTBI is the positive class).
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src.errors import DataError

CHANCE_Z = 1.96


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion table."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def is_positive(labels: Sequence[int]) -> np.ndarray:
    """Positive (mTBI) mask for labels in {0, 1} or {-1, +1}."""
    labels = np.asarray(labels)
    if labels.size and not np.all(np.isin(labels, (-1, 0, 1))):
        raise DataError("labels must be in {0, 1} or {-1, +1}")
    return labels == 1


def confusion(pred: Sequence[int], truth: Sequence[int]) -> ConfusionCounts:
    """
    Count TP, FP, TN and FN with mTBI as the positive class.

    Args:
        pred: Predicted labels
        truth: True labels, same length
    """
    if len(pred) != len(truth):
        raise DataError(f"length mismatch: {len(pred)} predictions vs {len(truth)} labels")
    p = is_positive(pred)
    t = is_positive(truth)
    return ConfusionCounts(
        tp=int(np.sum(p & t)),
        fp=int(np.sum(p & ~t)),
        tn=int(np.sum(~p & ~t)),
        fn=int(np.sum(~p & t)),
    )


def sensitivity(c: ConfusionCounts) -> Optional[float]:
    """TP / (TP + FN), or None when there are no positives."""
    return c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else None


def specificity(c: ConfusionCounts) -> Optional[float]:
    """TN / (TN + FP), or None when there are no negatives."""
    return c.tn / (c.tn + c.fp) if c.tn + c.fp > 0 else None


def accuracy(c: ConfusionCounts) -> Optional[float]:
    """(TP + TN) / total, or None for an empty table."""
    return (c.tp + c.tn) / c.total if c.total > 0 else None


def mean_defined(values: Sequence[Optional[float]]) -> Optional[float]:
    """Mean of the defined entries; None if none is defined."""
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def majority_rate(labels: Sequence[int]) -> float:
    """Share of the larger class."""
    positive = is_positive(labels)
    if positive.size == 0:
        raise DataError("no labels")
    share = float(np.mean(positive))
    return max(share, 1.0 - share)


def chance_interval(labels: Sequence[int], n_predictions: int, z: float = CHANCE_Z) -> Tuple[float, float]:
    """
    Normal-approximation binomial interval around the majority-class rate.

    Args:
        labels: All subject labels
        n_predictions: Validation rows scored per repeat
        z: Two-sided normal quantile (1.96 for 95%)

    Returns:
        Tuple[float, float]: Lower and upper bound, clipped to [0, 1]
    """
    if n_predictions < 1:
        raise DataError(f"chance interval needs at least one prediction, got {n_predictions}")
    p = majority_rate(labels)
    half = z * float(np.sqrt(p * (1.0 - p) / n_predictions))
    return max(0.0, p - half), min(1.0, p + half)
