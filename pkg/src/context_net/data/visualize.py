from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .netpbm import write_pgm, write_rgb
from .sample import IGNORE_INDEX

# background_stuff, large_blob, small_dot, thin_line, grid_texture
PALETTE = np.array(
    [
        [128, 64, 128],
        [70, 130, 180],
        [220, 220, 0],
        [220, 20, 60],
        [107, 142, 35],
    ],
    dtype=np.uint8,
)
IGNORE_COLOR = np.array([0, 0, 0], dtype=np.uint8)


def gate_to_raster(values: np.ndarray) -> np.ndarray:
    """floor(clip(v, 0, 1) * 255) as uint8"""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def nearest_resize(raster: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of a 2-D raster (half-pixel centres)"""
    in_h, in_w = raster.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(np.int64), in_h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(np.int64), in_w - 1)
    return raster[rows[:, None], cols[None, :]]


def gate_filename(sample_id: str, block: int, view_size: Optional[Tuple[int, int]] = None) -> str:
    if view_size is None:
        return f"{sample_id}_acb{block}_gate.pgm"
    return f"{sample_id}_acb{block}_gate_{view_size[0]}x{view_size[1]}.pgm"


def export_gate_heatmap(
    gate: np.ndarray,
    path: Union[str, Path],
    view_size: Optional[Tuple[int, int]] = None,
) -> Path:
    """Write one (h, w) gate map as an 8-bit PGM, optionally nearest-upsampled to ``view_size``"""
    raster = gate_to_raster(np.asarray(gate))
    if view_size is not None:
        raster = nearest_resize(raster, *view_size)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(path, raster)
    return path


def colorize(labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """(h, w) class ids -> (h, w, 3) palette colors; ignored and unknown ids are black"""
    labels = np.asarray(labels)
    out = np.broadcast_to(IGNORE_COLOR, labels.shape + (3,)).copy()
    known = (labels != ignore_index) & (labels < len(PALETTE))
    out[known] = PALETTE[labels[known]]
    return out


def export_overlay(labels: np.ndarray, path: Union[str, Path], ignore_index: int = IGNORE_INDEX) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_rgb(path, colorize(labels, ignore_index))
    return path
