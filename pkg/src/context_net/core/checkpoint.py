import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from ..tensor.serialization import TensorFormatError, read_tensors, write_tensor
from .layers import Module

logger = logging.getLogger(__name__)

TENSORS_FILE = "model.act"
MANIFEST_FILE = "model.manifest"


class CheckpointError(Exception):
    """Raised when a checkpoint is missing, malformed or does not fit the model"""

    pass


def _entries(model: Module) -> List[Tuple[str, np.ndarray]]:
    """Parameters first, then BN running statistics, in registration order"""
    entries = [(name, param.data) for name, param in model.named_parameters()]
    for name, stats in model.named_buffers():
        entries.append((f"{name}.running_mean", stats.mean))
        entries.append((f"{name}.running_var", stats.var))
    return entries


def save_checkpoint(model: Module, directory: Union[str, Path]) -> Path:
    """Write ``model.act`` and ``model.manifest`` into ``directory``"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = _entries(model)
    with open(directory / TENSORS_FILE, "wb") as f:
        for _, array in entries:
            write_tensor(f, array)
    lines = [f"{index} {name}" for index, (name, _) in enumerate(entries)]
    (directory / MANIFEST_FILE).write_text("\n".join(lines) + "\n")
    logger.info(f"Saved checkpoint with {len(entries)} tensors to {directory}")
    return directory


def read_manifest(path: Union[str, Path]) -> List[str]:
    names = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or not parts[0].isdigit() or int(parts[0]) != len(names):
            raise CheckpointError(f"{path}:{lineno}: expected '<index> <name>', got {line!r}")
        names.append(parts[1])
    return names


def load_checkpoint(model: Module, directory: Union[str, Path]) -> None:
    """Copy tensors from ``directory`` into ``model`` by name

    Raises:
        CheckpointError: If files are missing or names and shapes disagree with the model
    """
    directory = Path(directory)
    tensors_path = directory / TENSORS_FILE
    manifest_path = directory / MANIFEST_FILE
    if not tensors_path.exists() or not manifest_path.exists():
        raise CheckpointError(f"No checkpoint at {directory} (need {TENSORS_FILE} and {MANIFEST_FILE})")

    names = read_manifest(manifest_path)
    try:
        with open(tensors_path, "rb") as f:
            arrays = read_tensors(f)
    except TensorFormatError as e:
        raise CheckpointError(f"Corrupt tensor file {tensors_path}: {e}") from e
    if len(arrays) != len(names):
        raise CheckpointError(f"Manifest lists {len(names)} tensors, file holds {len(arrays)}")
    stored = dict(zip(names, arrays))

    expected = [name for name, _ in _entries(model)]
    missing = [name for name in expected if name not in stored]
    unexpected = [name for name in names if name not in set(expected)]
    if missing or unexpected:
        raise CheckpointError(f"Checkpoint does not fit the model: missing {missing[:5]}, unexpected {unexpected[:5]}")

    for name, param in model.named_parameters():
        param.data = _checked(stored[name], param.data.shape, name)
    for name, stats in model.named_buffers():
        stats.mean = _checked(stored[f"{name}.running_mean"], stats.mean.shape, name)
        stats.var = _checked(stored[f"{name}.running_var"], stats.var.shape, name)
    logger.info(f"Loaded checkpoint from {directory}")


def _checked(array: np.ndarray, shape: Tuple[int, ...], name: str) -> np.ndarray:
    if array.shape != shape:
        raise CheckpointError(f"{name}: checkpoint shape {array.shape} != model shape {shape}")
    return np.ascontiguousarray(array)
