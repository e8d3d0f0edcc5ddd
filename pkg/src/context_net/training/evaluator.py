import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..core.layers import Module
from ..core.network import OUTPUT_STRIDE
from ..data.metrics import ConfusionMatrix, miou_pixacc, update_confusion
from ..data.sample import IGNORE_INDEX, SegmentationSample
from ..tensor.ops import bilinear_resize_array
from ..tensor.tensor import Tensor
from .losses import softmax

THREADS_ENV = "ACNET_THREADS"


class EvalResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    confusion: ConfusionMatrix
    miou: float
    pixacc: float
    per_class: List[Optional[float]]


def pad_to_multiple(image: np.ndarray, multiple: int = OUTPUT_STRIDE) -> np.ndarray:
    """Zero-pad a (c, h, w) array at the bottom/right so both sides divide ``multiple``"""
    h, w = image.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if not pad_h and not pad_w:
        return image
    return np.pad(image, ((0, 0), (0, pad_h), (0, pad_w)))


def resolve_threads(configured: int) -> int:
    """Worker count: ``ACNET_THREADS`` when set, else ``configured``"""
    value = os.getenv(THREADS_ENV)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logging.getLogger("Evaluator").warning(f"Ignoring non-integer {THREADS_ENV}={value!r}")
    return max(1, configured)


class Evaluator:
    """Multi-scale, optionally mirrored inference and confusion-matrix accumulation

    Args:
        model: Segmentation model; switched to eval mode while evaluating
        num_classes: Number of classes K
        scales: Resize factors whose softmax outputs are averaged
        mirror: Also average the left-right mirrored input of every scale
        threads: Worker threads; samples are split into contiguous chunks
    """

    def __init__(
        self,
        model: Module,
        num_classes: int,
        scales: Sequence[float] = (1.0,),
        mirror: bool = False,
        threads: int = 1,
        ignore_index: int = IGNORE_INDEX,
    ):
        if not scales:
            raise ValueError("scales must be nonempty")
        self.model = model
        self.num_classes = num_classes
        self.scales = list(scales)
        self.mirror = mirror
        self.threads = max(1, threads)
        self.ignore_index = ignore_index
        self.logger = logging.getLogger("Evaluator")

    def _forward_probs(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[1:]
        padded = pad_to_multiple(image)
        logits = self.model(Tensor(padded[None])).logits.data[0, :, :h, :w]
        return softmax(logits, axis=0)

    def predict_probs(self, image: np.ndarray) -> np.ndarray:
        """Average (K, h, w) class probabilities over every scale and mirror variant"""
        h, w = image.shape[1:]
        total = np.zeros((self.num_classes, h, w))
        count = 0
        for scale in self.scales:
            sh, sw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
            scaled = image if (sh, sw) == (h, w) else bilinear_resize_array(image, sh, sw)
            variants = [False, True] if self.mirror else [False]
            for flipped in variants:
                source = scaled[:, :, ::-1] if flipped else scaled
                probs = self._forward_probs(np.ascontiguousarray(source))
                if flipped:
                    probs = probs[:, :, ::-1]
                if (sh, sw) != (h, w):
                    probs = bilinear_resize_array(probs, h, w)
                total += probs
                count += 1
        return total / count

    def predict(self, image: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_probs(image), axis=0).astype(np.uint8)

    def _confusion(self, samples: Sequence[SegmentationSample]) -> ConfusionMatrix:
        cm = ConfusionMatrix(self.num_classes)
        for sample in samples:
            update_confusion(cm, self.predict(sample.image), sample.labels, self.ignore_index)
        return cm

    def evaluate(self, samples: Sequence[SegmentationSample]) -> EvalResult:
        samples = list(samples)
        was_training = self.model.training
        self.model.eval()
        try:
            if self.threads == 1 or len(samples) < 2:
                cm = self._confusion(samples)
            else:
                chunks = [chunk for chunk in np.array_split(np.arange(len(samples)), self.threads) if len(chunk)]
                with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                    parts = list(pool.map(lambda idx: self._confusion([samples[i] for i in idx]), chunks))
                cm = ConfusionMatrix(self.num_classes)
                for part in parts:
                    cm = cm + part
        finally:
            self.model.train(was_training)

        miou, pixacc, per_class = miou_pixacc(cm)
        self.logger.info(f"Evaluated {len(samples)} samples: mIoU {miou:.4f}, pixAcc {pixacc:.4f}")
        return EvalResult(confusion=cm, miou=miou, pixacc=pixacc, per_class=per_class)


def evaluate(
    model: Module,
    samples: Sequence[SegmentationSample],
    num_classes: int,
    scales: Sequence[float] = (1.0,),
    mirror: bool = False,
    threads: int = 1,
) -> EvalResult:
    return Evaluator(model, num_classes, scales=scales, mirror=mirror, threads=threads).evaluate(samples)
