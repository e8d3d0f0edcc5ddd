from typing import Optional

import numpy as np

from ..data.sample import IGNORE_INDEX, SegmentationSample
from ..data.visualize import nearest_resize
from ..tensor.ops import bilinear_resize_array
from ..utils.config import AugmentConfig


def rescale(sample: SegmentationSample, factor: float) -> SegmentationSample:
    """Bilinear resize of the image and nearest resize of the labels by ``factor``"""
    out_h = max(1, int(round(sample.height * factor)))
    out_w = max(1, int(round(sample.width * factor)))
    if (out_h, out_w) == (sample.height, sample.width):
        return sample
    image = bilinear_resize_array(sample.image, out_h, out_w)
    labels = nearest_resize(sample.labels, out_h, out_w)
    return SegmentationSample(image=image, labels=labels, id=sample.id)


def pad_to(sample: SegmentationSample, min_h: int, min_w: int, ignore_index: int = IGNORE_INDEX) -> SegmentationSample:
    """Pad bottom/right to at least (min_h, min_w): zeros for the image, ``ignore_index`` for labels"""
    pad_h = max(0, min_h - sample.height)
    pad_w = max(0, min_w - sample.width)
    if not pad_h and not pad_w:
        return sample
    image = np.pad(sample.image, ((0, 0), (0, pad_h), (0, pad_w)))
    labels = np.pad(sample.labels, ((0, pad_h), (0, pad_w)), constant_values=ignore_index)
    return SegmentationSample(image=image, labels=labels, id=sample.id)


def hflip(sample: SegmentationSample) -> SegmentationSample:
    return SegmentationSample(
        image=sample.image[:, :, ::-1].copy(), labels=sample.labels[:, ::-1].copy(), id=sample.id
    )


def augment(
    sample: SegmentationSample,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    ignore_index: int = IGNORE_INDEX,
    flip: Optional[bool] = None,
) -> SegmentationSample:
    """Random scale, pad, crop to ``cfg.crop_size`` and horizontal flip.

    Image and labels share every geometric step. ``flip`` forces the flip
    decision; the random draw is consumed either way so streams stay aligned.
    """
    if cfg.scale_range is not None:
        sample = rescale(sample, float(rng.uniform(*cfg.scale_range)))

    crop = cfg.crop_size
    sample = pad_to(sample, crop, crop, ignore_index)
    top = int(rng.integers(0, sample.height - crop + 1))
    left = int(rng.integers(0, sample.width - crop + 1))
    sample = SegmentationSample(
        image=sample.image[:, top:top + crop, left:left + crop].copy(),
        labels=sample.labels[top:top + crop, left:left + crop].copy(),
        id=sample.id,
    )

    draw = rng.random() < cfg.hflip_prob
    do_flip = draw if flip is None else flip
    if do_flip:
        sample = hflip(sample)
    return sample
