import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..data.sample import IGNORE_INDEX, check_labels
from ..tensor.tensor import DTYPE, Primitive, Tensor
from ..utils.config import LossConfig, OhemConfig

logger = logging.getLogger(__name__)


class DegenerateBatchError(ValueError):
    """Raised when every pixel of a batch is ignored"""

    pass


class LossValue(BaseModel):
    """Scalar loss with its gradient w.r.t. the logits

    Attributes:
        loss: Mean cross-entropy over kept pixels
        grad: (n, K, h, w) gradient of ``loss``
        kept: Number of pixels averaged
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    loss: float
    grad: np.ndarray
    kept: int


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _masked_cross_entropy(logits: np.ndarray, labels: np.ndarray, keep: np.ndarray) -> LossValue:
    count = int(keep.sum())
    if count == 0:
        raise DegenerateBatchError("No pixel contributes to the loss (all ignored)")
    logp = log_softmax(logits)
    safe = np.where(keep, labels, 0).astype(np.int64)
    picked = np.take_along_axis(logp, safe[:, None], axis=1)[:, 0]
    loss = float(-np.sum(picked[keep]) / count)

    grad = np.exp(logp)
    np.put_along_axis(grad, safe[:, None], np.take_along_axis(grad, safe[:, None], axis=1) - 1.0, axis=1)
    grad *= keep[:, None] / count
    return LossValue(loss=loss, grad=grad, kept=count)


def _validated(logits, labels, ignore_index):
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=DTYPE)
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    check_labels(labels, logits.shape[1], ignore_index)
    return logits, labels


def ce_loss(logits, labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> LossValue:
    """Mean per-pixel cross-entropy over non-ignored pixels

    Raises:
        DegenerateBatchError: If every pixel is ignored
        DataError: If a label is neither a class id nor ``ignore_index``
    """
    logits, labels = _validated(logits, labels, ignore_index)
    return _masked_cross_entropy(logits, labels, labels != ignore_index)


def ohem_keep_mask(
    logits: np.ndarray, labels: np.ndarray, cfg: OhemConfig, ignore_index: int = IGNORE_INDEX
) -> np.ndarray:
    """Pixels whose true-class probability is at most ``cfg.threshold``.

    When fewer than ``min_kept`` qualify, the ``min_kept`` lowest-probability
    pixels are kept instead, ties resolved in raster order.
    """
    valid = labels != ignore_index
    probs = softmax(logits)
    safe = np.where(valid, labels, 0).astype(np.int64)
    true_prob = np.take_along_axis(probs, safe[:, None], axis=1)[:, 0]

    keep = valid & (true_prob <= cfg.threshold)
    min_kept = cfg.min_kept if cfg.min_kept is not None else max(1, labels.size // 16)
    n_valid = int(valid.sum())
    if int(keep.sum()) >= min(min_kept, n_valid):
        return keep

    flat_valid = np.flatnonzero(valid.ravel())
    order = np.argsort(true_prob.ravel()[flat_valid], kind="stable")
    chosen = flat_valid[order[:min_kept]]
    keep = np.zeros(labels.size, dtype=bool)
    keep[chosen] = True
    return keep.reshape(labels.shape)


def ohem_loss(logits, labels: np.ndarray, cfg: LossConfig) -> LossValue:
    """Cross-entropy averaged over hard pixels only; selection is not differentiated

    Falls back to ``ce_loss`` when ``cfg.ohem`` is unset.
    """
    if cfg.ohem is None:
        return ce_loss(logits, labels, cfg.ignore_index)
    logits, labels = _validated(logits, labels, cfg.ignore_index)
    keep = ohem_keep_mask(logits, labels, cfg.ohem, cfg.ignore_index)
    return _masked_cross_entropy(logits, labels, keep)


class SoftmaxCrossEntropy(Primitive):
    """Scalar segmentation loss on the tape; the pixel selection is fixed at forward time"""

    name = "softmax_cross_entropy"

    def forward(self, ctx, logits, labels: np.ndarray, cfg: LossConfig):
        value = ohem_loss(logits, labels, cfg)
        ctx.grad = value.grad
        return np.asarray(value.loss, dtype=DTYPE)

    def backward(self, ctx, grad_output):
        return (ctx.grad * float(np.sum(grad_output)),)


_SOFTMAX_CROSS_ENTROPY = SoftmaxCrossEntropy()


def segmentation_loss(logits: Tensor, labels: np.ndarray, cfg: Optional[LossConfig] = None) -> Tensor:
    """Differentiable scalar loss (plain or hard-mined cross-entropy per ``cfg``)"""
    return _SOFTMAX_CROSS_ENTROPY(logits, labels=labels, cfg=cfg or LossConfig())
