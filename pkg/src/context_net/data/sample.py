from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

IGNORE_INDEX = 255

CLASS_NAMES: List[str] = [
    "background_stuff",
    "large_blob",
    "small_dot",
    "thin_line",
    "grid_texture",
]
STUFF_CLASSES = (0, 1, 4)
DETAIL_CLASSES = (2, 3)


class DataError(ValueError):
    """Raised when label values fall outside the class range"""

    pass


class FormatError(ValueError):
    """Raised when a raster or manifest file is malformed"""

    pass


class SegmentationSample(BaseModel):
    """One annotated image

    Attributes:
        image: (3, h, w) float array with values in [0, 1]
        labels: (h, w) uint8 array, class ids or ``IGNORE_INDEX``
        id: Sample identifier, used for output file names
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: np.ndarray
    labels: np.ndarray
    id: str

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be (3, h, w), got {self.image.shape}")
        if self.labels.shape != self.image.shape[1:]:
            raise ValueError(
                f"labels {self.labels.shape} do not match image {self.image.shape[1:]}"
            )
        return self

    @property
    def height(self) -> int:
        return int(self.image.shape[1])

    @property
    def width(self) -> int:
        return int(self.image.shape[2])


def check_labels(labels: np.ndarray, num_classes: int, ignore_index: int = IGNORE_INDEX) -> None:
    """Raise ``DataError`` if any label is neither a class id nor ``ignore_index``"""
    bad = (labels != ignore_index) & ((labels < 0) | (labels >= num_classes))
    if np.any(bad):
        values = sorted(set(np.asarray(labels)[bad].tolist()))[:5]
        raise DataError(f"Label values {values} outside [0, {num_classes}) and not {ignore_index}")
