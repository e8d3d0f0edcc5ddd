"""Portable tensor container.

Record layout: magic ``ACT1``, little-endian u32 rank, ``rank`` little-endian
u32 dims, then the payload as little-endian float32 in row-major order.
"""

from typing import BinaryIO, List

import numpy as np

from .tensor import TensorError

MAGIC = b"ACT1"


class TensorFormatError(TensorError):
    """Raised when a tensor record is malformed or truncated"""

    pass


def write_tensor(stream: BinaryIO, array: np.ndarray) -> None:
    array = np.asarray(array)
    header = np.asarray([array.ndim, *array.shape], dtype="<u4")
    stream.write(MAGIC)
    stream.write(header.tobytes())
    stream.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_exact(stream: BinaryIO, count: int, what: str) -> bytes:
    data = stream.read(count)
    if len(data) != count:
        raise TensorFormatError(f"Truncated tensor record while reading {what}")
    return data


def read_tensor(stream: BinaryIO) -> np.ndarray:
    """Read one record; the result is promoted to float64"""
    magic = _read_exact(stream, 4, "magic")
    if magic != MAGIC:
        raise TensorFormatError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    rank = int(np.frombuffer(_read_exact(stream, 4, "rank"), dtype="<u4")[0])
    dims = np.frombuffer(_read_exact(stream, 4 * rank, "dims"), dtype="<u4").astype(np.int64)
    count = int(np.prod(dims)) if rank else 1
    payload = _read_exact(stream, 4 * count, "payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(tuple(dims))


def read_tensors(stream: BinaryIO) -> List[np.ndarray]:
    """Read consecutive records until end of stream"""
    tensors = []
    while True:
        peek = stream.read(1)
        if not peek:
            return tensors
        stream.seek(-1, 1)
        tensors.append(read_tensor(stream))
