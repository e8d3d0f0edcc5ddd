"""Global and local gated coefficients.

The global gate measures how close each pixel feature is to the image-level
feature: w = exp(-(d - k) / delta), where k is the per-sample minimum distance.
The local gate is the complement of the upsampled global gate.
"""

import logging
import threading
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..tensor import ops
from ..tensor.tensor import DTYPE, Tensor

logger = logging.getLogger(__name__)

DISTANCE_EPS = 1e-12

# Smallest gate value. 1 - GATE_FLOOR is still representable below 1,
# so the local gate never rounds up to 1.
GATE_FLOOR = float(np.finfo(DTYPE).epsneg)


class ParameterError(ValueError):
    """Raised when a context-module hyperparameter is out of range"""

    pass


class GateField(BaseModel):
    """Per-sample spatial gate map of shape (n, 1, h, w)

    Attributes:
        values: Gate tensor
        kind: ``global`` (values in (0, 1], per-sample max 1), ``local`` (values in [0, 1))
            or ``uniform`` (all ones, stands in for a disabled local gate)
        delta: Smoothing amplitude, global gates only
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: Tensor
    kind: Literal["global", "local", "uniform"]
    delta: Optional[float] = None

    @property
    def shape(self):
        return self.values.shape

    def numpy(self) -> np.ndarray:
        return self.values.data


class FrozenOffsets:
    """Pins the per-sample offsets k across repeated evaluations.

    k is excluded from differentiation. While a ``FrozenOffsets`` is active,
    the first evaluation records every k it computes and later evaluations
    reuse them in the same order, so finite differences see the same
    constant the backward pass assumed.
    """

    _local = threading.local()

    def __init__(self):
        self._offsets: Optional[List[np.ndarray]] = None
        self._recording = False
        self._cursor = 0

    @classmethod
    def active(cls) -> Optional["FrozenOffsets"]:
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def __enter__(self) -> "FrozenOffsets":
        if not hasattr(self._local, "stack"):
            self._local.stack = []
        self._local.stack.append(self)
        self._recording = self._offsets is None
        if self._recording:
            self._offsets = []
        self._cursor = 0
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self._local.stack.pop()
        self._recording = False

    def resolve(self, computed: np.ndarray) -> np.ndarray:
        if self._recording:
            self._offsets.append(computed.copy())
            return computed
        if self._cursor >= len(self._offsets):
            raise RuntimeError("More gate offsets requested than were recorded")
        offset = self._offsets[self._cursor]
        self._cursor += 1
        return offset


def compute_distance_map(A: Tensor, p: Tensor) -> Tensor:
    """Per-pixel Euclidean distance between ``A`` (n,c,h,w) and ``p`` (n,c,1,1)

    Raises:
        DimensionError: If batch or channel counts differ
    """
    return ops.channel_norm(ops.sub(A, p), eps=DISTANCE_EPS)


def compute_global_gate(D: Tensor, delta: float) -> GateField:
    """exp(-(d - k) / delta) with k the per-sample minimum of ``D``

    Raises:
        ParameterError: If ``delta`` is not positive
    """
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    offsets = D.data.min(axis=(2, 3), keepdims=True)
    frozen = FrozenOffsets.active()
    if frozen is not None:
        offsets = frozen.resolve(offsets)
    shifted = ops.sub(D, Tensor(offsets))
    values = ops.exp(ops.scale(shifted, -1.0 / delta), floor=GATE_FLOOR)
    return GateField(values=values, kind="global", delta=float(delta))


def uniform_global_gate(reference: Tensor) -> GateField:
    """Gate of all ones shaped like one channel of ``reference``"""
    n, _, h, w = reference.shape
    return GateField(values=Tensor.ones((n, 1, h, w)), kind="global")


def compute_local_gate(Wg: GateField, out_h: int, out_w: int) -> GateField:
    """1 - bilinear_upsample(Wg) at (out_h, out_w)"""
    if Wg.kind != "global":
        raise ParameterError("compute_local_gate expects a global gate")
    upsampled = ops.bilinear_upsample(Wg.values, out_h, out_w)
    values = ops.add(ops.scale(upsampled, -1.0), 1.0)
    return GateField(values=values, kind="local")


def uniform_local_gate(reference: Tensor) -> GateField:
    """All-ones replacement for the local gate when local gating is off"""
    n, _, h, w = reference.shape
    return GateField(values=Tensor.ones((n, 1, h, w)), kind="uniform")
