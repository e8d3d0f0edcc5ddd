import logging
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from .sample import IGNORE_INDEX, FormatError, SegmentationSample, check_labels

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ManifestEntry = Tuple[str, str, str]


def load_sample(image_path: PathLike, label_path: PathLike, sample_id: Optional[str] = None) -> SegmentationSample:
    """Load a P6 image and its P5 label raster

    Raises:
        FormatError: On malformed files or mismatched dimensions
    """
    image = read_ppm(image_path)
    labels = read_pgm(label_path)
    if labels.shape != image.shape[1:]:
        raise FormatError(
            f"Label raster {label_path} is {labels.shape}, image {image_path} is {image.shape[1:]}"
        )
    return SegmentationSample(image=image, labels=labels, id=sample_id or Path(image_path).stem)


def save_sample(sample: SegmentationSample, directory: PathLike) -> Tuple[Path, Path]:
    """Write ``<id>.ppm`` and ``<id>_label.pgm`` into ``directory``"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    image_path = directory / f"{sample.id}.ppm"
    label_path = directory / f"{sample.id}_label.pgm"
    write_ppm(image_path, sample.image)
    write_pgm(label_path, sample.labels)
    return image_path, label_path


def read_manifest(path: PathLike) -> List[ManifestEntry]:
    """Parse ``id image_path label_path`` lines; paths resolve against the manifest's directory"""
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'id image label', got {stripped!r}")
        sample_id, image, label = fields
        entries.append((sample_id, str(base / image), str(base / label)))
    return entries


def write_manifest(path: PathLike, entries: Sequence[ManifestEntry]) -> None:
    """Write manifest lines with paths made relative to the manifest's directory"""
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for sample_id, image, label in entries:
        rel_image = Path(image).resolve().relative_to(base)
        rel_label = Path(label).resolve().relative_to(base)
        lines.append(f"{sample_id} {rel_image.as_posix()} {rel_label.as_posix()}")
    path.write_text("".join(f"{line}\n" for line in lines))


class SegmentationDataset:
    """In-memory list of samples with optional label validation"""

    def __init__(self, samples: Sequence[SegmentationSample], num_classes: Optional[int] = None,
                 ignore_index: int = IGNORE_INDEX):
        self.samples = list(samples)
        if num_classes is not None:
            for sample in self.samples:
                check_labels(sample.labels, num_classes, ignore_index)

    @classmethod
    def from_manifest(cls, path: PathLike, num_classes: Optional[int] = None) -> "SegmentationDataset":
        entries = read_manifest(path)
        samples = [load_sample(image, label, sample_id) for sample_id, image, label in entries]
        logger.info(f"Loaded {len(samples)} samples from {path}")
        return cls(samples, num_classes=num_classes)

    def save(self, directory: PathLike, manifest_name: str = "manifest.txt") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for sample in self.samples:
            image_path, label_path = save_sample(sample, directory / "samples")
            entries.append((sample.id, str(image_path), str(label_path)))
        manifest = directory / manifest_name
        write_manifest(manifest, entries)
        return manifest

    def class_histogram(self, num_classes: int) -> np.ndarray:
        counts = np.zeros(num_classes, dtype=np.int64)
        for sample in self.samples:
            valid = sample.labels[sample.labels < num_classes]
            counts += np.bincount(valid.ravel(), minlength=num_classes)[:num_classes]
        return counts

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> SegmentationSample:
        return self.samples[index]

    def __iter__(self) -> Iterator[SegmentationSample]:
        return iter(self.samples)
