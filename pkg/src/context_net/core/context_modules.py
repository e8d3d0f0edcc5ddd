import logging
from typing import List, Optional, Tuple

import numpy as np

from ..tensor import ops
from ..tensor.tensor import DimensionError, GeometryError, Tensor
from .gates import (
    GateField,
    ParameterError,
    compute_distance_map,
    compute_global_gate,
    compute_local_gate,
    uniform_global_gate,
    uniform_local_gate,
)
from .layers import ConvBNReLU, Module, scalar_parameter

logger = logging.getLogger(__name__)


class GlobalContextModule(Module):
    """Adds alpha * w^g * p to every pixel feature of its input

    Args:
        channels: Feature channels (the global feature has the same width)
        rng: Generator for the reduction conv weights
        delta: Gate smoothing amplitude
        gate_mode: ``adaptive`` for the distance gate, ``uniform`` for w^g = 1
    """

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator,
        delta: float = 5.0,
        gate_mode: str = "adaptive",
        bias: bool = False,
    ):
        super().__init__()
        if not delta > 0:
            raise ParameterError(f"delta must be positive, got {delta}")
        if gate_mode not in ("adaptive", "uniform"):
            raise ParameterError(f"Unknown gate mode: {gate_mode}")
        self.channels = channels
        self.delta = delta
        self.gate_mode = gate_mode
        self.reduce = self.register_module("reduce", ConvBNReLU(channels, channels, rng, kernel=1, bias=bias))
        self.alpha = self.register_parameter("alpha", scalar_parameter(1.0, "alpha"))

    def forward(self, A: Tensor, gated: bool = True) -> Tuple[Tensor, GateField]:
        return gcm_forward(A, self, self.delta, gated=gated)


class LocalContextModule(Module):
    """Gated low-level features concatenated with the decoder feature and fused ``reuse_count`` times

    Args:
        low_channels: Channels of the raw low-level feature
        high_channels: Channels of the upsampled high-level feature E
        out_channels: Channels produced by every fusion conv
        reduced_channels: Channels of the refined low-level feature B
        reuse_count: Number of concat + conv fusions, each with its own weights
    """

    def __init__(
        self,
        low_channels: int,
        high_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        reduced_channels: int = 48,
        reuse_count: int = 3,
        local_gating: bool = True,
        bias: bool = False,
    ):
        super().__init__()
        if reuse_count < 1:
            raise ParameterError(f"reuse_count must be >= 1, got {reuse_count}")
        self.reuse_count = reuse_count
        self.out_channels = out_channels
        self.local_gating = local_gating
        self.lowlevel_reduce = self.register_module(
            "lowlevel_reduce", ConvBNReLU(low_channels, reduced_channels, rng, kernel=3, bias=bias)
        )
        self.fuse_convs: List[ConvBNReLU] = []
        in_channels = reduced_channels + high_channels
        for t in range(reuse_count):
            conv = ConvBNReLU(in_channels, out_channels, rng, kernel=3, bias=bias)
            self.fuse_convs.append(self.register_module(f"fuse{t + 1}", conv))
            in_channels = reduced_channels + out_channels
        self.beta = self.register_parameter("beta", scalar_parameter(1.0, "beta"))

    def forward(self, B: Tensor, E: Tensor, Wl: GateField, gated: bool = True) -> Tensor:
        return lcm_forward(B, E, Wl, self, gated=gated)


class AdaptiveContextBlock(Module):
    """GCM on the high-level feature, x2 bilinear upsample, then an optional LCM"""

    upsample_factor = 2

    def __init__(
        self,
        in_channels: int,
        rng: np.random.Generator,
        delta: float = 5.0,
        low_channels: Optional[int] = None,
        out_channels: Optional[int] = None,
        reduced_channels: int = 48,
        reuse_count: int = 3,
        gate_mode: str = "adaptive",
        local_gating: bool = True,
        bias: bool = False,
    ):
        super().__init__()
        self.delta = delta
        self.gcm = self.register_module(
            "gcm", GlobalContextModule(in_channels, rng, delta=delta, gate_mode=gate_mode, bias=bias)
        )
        self.lcm: Optional[LocalContextModule] = None
        if low_channels is not None:
            self.lcm = self.register_module(
                "lcm",
                LocalContextModule(
                    low_channels,
                    in_channels,
                    out_channels or in_channels,
                    rng,
                    reduced_channels=reduced_channels,
                    reuse_count=reuse_count,
                    local_gating=local_gating,
                    bias=bias,
                ),
            )
        self.out_channels = self.lcm.out_channels if self.lcm is not None else in_channels

    def forward(self, high: Tensor, low: Optional[Tensor] = None, gated: bool = True) -> Tuple[Tensor, GateField]:
        return acb_forward(high, low, self, self.delta, gated=gated)


def compute_global_feature(A: Tensor, params: GlobalContextModule) -> Tensor:
    """Global average pool followed by the 1x1 conv + BN + ReLU reduction -> (n, c, 1, 1)

    Raises:
        DimensionError: If ``A``'s channels differ from the reduction conv's input
    """
    return params.reduce(ops.global_avg_pool(A))


def gcm_forward(
    A: Tensor, params: GlobalContextModule, delta: float, gated: bool = True
) -> Tuple[Tensor, GateField]:
    """C = alpha * w^g * p + A, returning C and the global gate

    With ``gated=False`` the gating arithmetic is left out entirely and C is A.
    """
    p = compute_global_feature(A, params)
    if params.gate_mode == "uniform":
        Wg = uniform_global_gate(A)
    else:
        Wg = compute_global_gate(compute_distance_map(A, p), delta)
    if not gated:
        return A, Wg
    context = ops.mul(ops.scale(Wg.values, params.alpha), p)
    return ops.add(context, A), Wg


def lcm_forward(
    B: Tensor, E: Tensor, Wl: GateField, params: LocalContextModule, gated: bool = True
) -> Tensor:
    """Fuse G = beta * w^l * B with E: F_t = conv_t(concat(G, F_{t-1})), F_0 = E

    ``B`` is the refined low-level feature. G is computed once and reused
    by every fusion step.

    Raises:
        DimensionError: If B, E and the gate disagree in (n, h, w)
    """
    if (B.shape[0], B.shape[2], B.shape[3]) != (E.shape[0], E.shape[2], E.shape[3]):
        raise DimensionError(f"LCM inputs disagree spatially: B {B.shape}, E {E.shape}")
    if Wl.shape != (B.shape[0], 1, B.shape[2], B.shape[3]):
        raise DimensionError(f"Local gate {Wl.shape} does not match feature {B.shape}")
    if gated:
        G = ops.mul(ops.scale(Wl.values, params.beta), B)
    else:
        G = ops.zeros_like(B)
    F = E
    for conv in params.fuse_convs:
        F = conv(ops.concat_channels(G, F))
    return F


def acb_forward(
    high: Tensor,
    low: Optional[Tensor],
    params: AdaptiveContextBlock,
    delta: float,
    gated: bool = True,
) -> Tuple[Tensor, GateField]:
    """One adaptive context block, returning its output and its global gate

    Raises:
        GeometryError: If ``low`` is not exactly twice ``high``'s resolution
        ValueError: If ``low`` is supplied without an LCM or vice versa
    """
    if (low is None) != (params.lcm is None):
        raise ValueError("acb_forward needs a low-level feature exactly when the block has an LCM")
    factor = params.upsample_factor
    out_h, out_w = high.shape[2] * factor, high.shape[3] * factor
    if low is not None and (low.shape[2], low.shape[3]) != (out_h, out_w):
        raise GeometryError(
            f"Low-level feature {low.shape[2]}x{low.shape[3]} is not twice the high-level "
            f"{high.shape[2]}x{high.shape[3]}"
        )

    C, Wg = gcm_forward(high, params.gcm, delta, gated=gated)
    E = ops.bilinear_upsample(C, out_h, out_w)
    if params.lcm is None:
        return E, Wg

    B = params.lcm.lowlevel_reduce(low)
    if params.lcm.local_gating:
        Wl = compute_local_gate(Wg, out_h, out_w)
    else:
        Wl = uniform_local_gate(B)
    return lcm_forward(B, E, Wl, params.lcm, gated=gated), Wg
