"""Synthetic scenes mixing large ambiguous regions with small distinctive details.

Background and blob colors come from the same distribution, so a pixel's
color alone cannot tell them apart; shape and extent can. Dots and lines use
colors no large region uses.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from ..utils.config import SynthConfig
from .sample import DETAIL_CLASSES, STUFF_CLASSES, SegmentationSample

BACKGROUND, BLOB, DOT, LINE, GRID = 0, 1, 2, 3, 4

MIN_BLOB_FRACTION = 0.15
MAX_DOT_FRACTION = 0.002


class GenerationError(RuntimeError):
    """Raised when a scene cannot satisfy its content guarantees within the retry budget"""

    pass


def _mask(size: int, draw_fn) -> np.ndarray:
    canvas = Image.new("L", (size, size), 0)
    draw_fn(ImageDraw.Draw(canvas))
    return np.array(canvas) > 0


def _region_color(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.25, 0.75, size=3)


class SynthGenerator:
    """Draws ``SegmentationSample`` scenes from a ``SynthConfig``; pure function of (config, seed)"""

    def __init__(self, cfg: SynthConfig, seed: Optional[int] = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        if self.seed is None:
            self.seed = 0
        self.logger = logging.getLogger("SynthGenerator")

    def generate(self, count: int, start: int = 0) -> List[SegmentationSample]:
        samples = [self.sample(index) for index in range(start, start + count)]
        self.logger.info(f"Generated {len(samples)} samples (seed {self.seed})")
        return samples

    def sample(self, index: int) -> SegmentationSample:
        """Scene ``index``; retried with fresh draws until it holds stuff and detail pixels

        Raises:
            GenerationError: After ``max_retries`` failed attempts
        """
        for attempt in range(self.cfg.max_retries):
            rng = np.random.default_rng([self.seed, index, attempt])
            image, labels = self._draw(rng)
            if np.isin(labels, STUFF_CLASSES).any() and np.isin(labels, DETAIL_CLASSES).any():
                return SegmentationSample(image=image, labels=labels, id=f"synth_{index:05d}")
            self.logger.debug(f"Sample {index} attempt {attempt} lacks stuff or detail pixels")
        raise GenerationError(
            f"Sample {index}: no valid scene after {self.cfg.max_retries} attempts"
        )

    def _draw(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        size = self.cfg.canvas
        labels = np.full((size, size), BACKGROUND, dtype=np.uint8)
        image = self._background(rng, size)

        self._grid(rng, image, labels)
        for _ in range(self._count(rng, self.cfg.blob_count)):
            self._blob(rng, image, labels)
        for _ in range(self._count(rng, self.cfg.line_count)):
            self._line(rng, image, labels)
        for _ in range(self._count(rng, self.cfg.dot_count)):
            self._dot(rng, image, labels)

        if self.cfg.noise_sigma > 0:
            image = image + rng.normal(0.0, self.cfg.noise_sigma, size=image.shape)
        image = np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
        return image, labels

    @staticmethod
    def _count(rng: np.random.Generator, bounds: Tuple[int, int]) -> int:
        return int(rng.integers(bounds[0], bounds[1] + 1))

    def _background(self, rng: np.random.Generator, size: int) -> np.ndarray:
        base = _region_color(rng)
        direction = rng.uniform(-0.15, 0.15, size=(3, 2))
        ramp = np.linspace(-1.0, 1.0, size)
        yy, xx = np.meshgrid(ramp, ramp, indexing="ij")
        return base[:, None, None] + direction[:, 0, None, None] * yy + direction[:, 1, None, None] * xx

    def _grid(self, rng: np.random.Generator, image: np.ndarray, labels: np.ndarray) -> None:
        size = labels.shape[0]
        h = int(rng.integers(size // 4, size // 2 + 1))
        w = int(rng.integers(size // 4, size // 2 + 1))
        top = int(rng.integers(0, size - h + 1))
        left = int(rng.integers(0, size - w + 1))
        period = int(rng.integers(3, 6))
        fill, stroke = _region_color(rng), _region_color(rng) * 0.5
        region = (slice(top, top + h), slice(left, left + w))
        yy, xx = np.mgrid[0:h, 0:w]
        on_line = (yy % period == 0) | (xx % period == 0)
        patch = np.where(on_line[None], stroke[:, None, None], fill[:, None, None])
        image[(slice(None),) + region] = patch
        labels[region] = GRID

    def _blob(self, rng: np.random.Generator, image: np.ndarray, labels: np.ndarray) -> None:
        size = labels.shape[0]
        min_area = MIN_BLOB_FRACTION * size * size
        rx = rng.uniform(0.3, 0.45) * size
        ry = max(min_area / (math.pi * rx), rng.uniform(0.3, 0.45) * size)
        ry = min(ry, size / 2 - 1)
        rx = max(rx, min_area / (math.pi * ry))
        cx = rng.uniform(rx, size - rx)
        cy = rng.uniform(ry, size - ry)
        mask = _mask(size, lambda d: d.ellipse((cx - rx, cy - ry, cx + rx, cy + ry), fill=1))
        self._paint(image, labels, mask, _region_color(rng), BLOB)

    def _line(self, rng: np.random.Generator, image: np.ndarray, labels: np.ndarray) -> None:
        size = labels.shape[0]
        start = tuple(rng.uniform(0, size - 1, size=2))
        end = tuple(rng.uniform(0, size - 1, size=2))
        width = int(rng.integers(1, 3))
        mask = _mask(size, lambda d: d.line([start, end], fill=1, width=width))
        self._paint(image, labels, mask, rng.uniform(0.0, 0.12, size=3), LINE)

    def _dot(self, rng: np.random.Generator, image: np.ndarray, labels: np.ndarray) -> None:
        size = labels.shape[0]
        side = max(1, int(math.floor(math.sqrt(MAX_DOT_FRACTION * size * size))))
        x = int(rng.integers(0, size - side + 1))
        y = int(rng.integers(0, size - side + 1))
        mask = _mask(size, lambda d: d.ellipse((x, y, x + side - 1, y + side - 1), fill=1))
        color = np.array([rng.uniform(0.88, 1.0), rng.uniform(0.85, 1.0), rng.uniform(0.0, 0.15)])
        self._paint(image, labels, mask, color, DOT)

    @staticmethod
    def _paint(image: np.ndarray, labels: np.ndarray, mask: np.ndarray, color: np.ndarray, label: int) -> None:
        image[:, mask] = color[:, None]
        labels[mask] = label


def synth_generate(cfg: SynthConfig, n: int, seed: Optional[int] = None) -> List[SegmentationSample]:
    """``n`` scenes from ``cfg``; ``seed`` overrides ``cfg.seed``"""
    return SynthGenerator(cfg, seed=seed).generate(n)
