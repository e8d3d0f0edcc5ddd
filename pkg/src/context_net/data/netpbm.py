"""Binary netpbm rasters: P6 for images, P5 for label maps."""

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .sample import FormatError

PathLike = Union[str, Path]


def _open(path: PathLike, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if img.format != "PPM":
                raise FormatError(f"{path}: expected a netpbm file, found {img.format}")
            if img.mode != mode:
                raise FormatError(f"{path}: expected mode {mode}, found {img.mode}")
            return np.array(img)
    except FormatError:
        raise
    except (UnidentifiedImageError, SyntaxError, ValueError) as e:
        raise FormatError(f"{path}: malformed header ({e})") from e
    except OSError as e:
        if isinstance(e, FileNotFoundError):
            raise
        raise FormatError(f"{path}: unreadable raster ({e})") from e


def read_ppm(path: PathLike) -> np.ndarray:
    """Read a P6 file as a (3, h, w) float array in [0, 1]"""
    rgb = _open(path, "RGB")
    return rgb.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    """Write a (3, h, w) array in [0, 1] as P6 (values rounded to k/255)"""
    quantized = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.ascontiguousarray(quantized.transpose(1, 2, 0))).save(path, format="PPM")


def write_rgb(path: PathLike, rgb: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 array as P6"""
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(path, format="PPM")


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a P5 file as an (h, w) uint8 array"""
    return _open(path, "L").astype(np.uint8)


def write_pgm(path: PathLike, raster: np.ndarray) -> None:
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise FormatError(f"PGM rasters are 2-D, got shape {raster.shape}")
    Image.fromarray(np.ascontiguousarray(raster, dtype=np.uint8)).save(path, format="PPM")
