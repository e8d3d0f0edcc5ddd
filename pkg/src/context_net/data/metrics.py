from typing import List, Optional, Tuple

import numpy as np

from .sample import IGNORE_INDEX, DataError


class UndefinedMetricError(ValueError):
    """Raised when metrics are requested from an empty confusion matrix"""

    pass


class ConfusionMatrix:
    """K x K pixel counts, rows = ground truth, columns = prediction.

    Matrices over the same classes merge by elementwise sum (``+``).
    """

    def __init__(self, num_classes: int, counts: Optional[np.ndarray] = None):
        self.num_classes = num_classes
        self.counts = (
            np.zeros((num_classes, num_classes), dtype=np.int64)
            if counts is None
            else np.asarray(counts, dtype=np.int64).copy()
        )

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise DataError(f"Cannot merge {self.num_classes}- and {other.num_classes}-class matrices")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        return f"ConfusionMatrix(num_classes={self.num_classes}, total={self.total})"


def update_confusion(
    cm: ConfusionMatrix, pred: np.ndarray, truth: np.ndarray, ignore_index: int = IGNORE_INDEX
) -> ConfusionMatrix:
    """Count (truth, pred) pairs of every non-ignored pixel into ``cm`` in place

    Raises:
        DataError: On shape mismatch or class ids outside [0, K)
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DataError(f"Prediction {pred.shape} and truth {truth.shape} differ in shape")
    keep = truth != ignore_index
    t = truth[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    k = cm.num_classes
    if t.size and (t.min() < 0 or t.max() >= k or p.min() < 0 or p.max() >= k):
        raise DataError(f"Class id outside [0, {k})")
    cm.counts += np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return cm


def miou_pixacc(cm: ConfusionMatrix) -> Tuple[float, float, List[Optional[float]]]:
    """Mean IoU over classes with a nonzero denominator, pixel accuracy, per-class IoU

    Per-class entries are ``None`` for excluded classes.

    Raises:
        UndefinedMetricError: If the matrix holds no pixels
    """
    total = cm.total
    if total == 0:
        raise UndefinedMetricError("Confusion matrix is empty")
    diag = np.diag(cm.counts).astype(np.float64)
    denom = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - diag
    per_class: List[Optional[float]] = [
        float(d / u) if u > 0 else None for d, u in zip(diag, denom)
    ]
    present = [v for v in per_class if v is not None]
    return float(np.mean(present)), float(diag.sum() / total), per_class
