"""Differentiable primitives on rank-4 feature maps.

Every public function here wraps a ``Primitive`` singleton so the call is
recorded on the active tape. The registry at the bottom lists the primitives
covered by the finite-difference suite.
"""

import math
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .tensor import (
    DTYPE,
    Context,
    DimensionError,
    GeometryError,
    Primitive,
    Tensor,
)

Scalar = Union[int, float]


class ConvSpec(BaseModel):
    """Geometry of a 2-D convolution"""

    model_config = ConfigDict(frozen=True)

    in_channels: int = Field(ge=0)
    out_channels: int = Field(ge=1)
    kernel: Tuple[int, int] = (3, 3)
    stride: int = Field(default=1, ge=1)
    padding: int = Field(default=0, ge=0)
    dilation: int = Field(default=1, ge=1)
    bias: bool = False

    def output_size(self, height: int, width: int) -> Tuple[int, int]:
        """Spatial output size for an input of ``height`` x ``width``

        Raises:
            GeometryError: If either output extent would be smaller than 1
        """
        kh, kw = self.kernel
        out_h = (height + 2 * self.padding - self.dilation * (kh - 1) - 1) // self.stride + 1
        out_w = (width + 2 * self.padding - self.dilation * (kw - 1) - 1) // self.stride + 1
        if out_h < 1 or out_w < 1:
            raise GeometryError(
                f"Convolution output {out_h}x{out_w} is empty for input {height}x{width} "
                f"(kernel={self.kernel}, stride={self.stride}, padding={self.padding}, "
                f"dilation={self.dilation})"
            )
        return out_h, out_w

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel[0], self.kernel[1])


def _require_rank4(array: np.ndarray, what: str) -> None:
    if array.ndim != 4:
        raise DimensionError(f"{what} must be rank-4 (n, c, h, w), got shape {array.shape}")


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def _window(start: int, stride: int, count: int) -> slice:
    return slice(start, start + stride * (count - 1) + 1, stride)


def im2col(x: np.ndarray, spec: ConvSpec, out_h: int, out_w: int) -> np.ndarray:
    """Patch tensor of shape (n, c, kh, kw, out_h, out_w)"""
    n, c, _, _ = x.shape
    kh, kw = spec.kernel
    p, s, d = spec.padding, spec.stride, spec.dilation
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, _window(i * d, s, out_h), _window(j * d, s, out_w)]
    return cols


def col2im(cols: np.ndarray, x_shape: Tuple[int, ...], spec: ConvSpec) -> np.ndarray:
    """Adjoint of ``im2col``: scatter-add patches back onto the input grid"""
    n, c, h, w = x_shape
    kh, kw = spec.kernel
    p, s, d = spec.padding, spec.stride, spec.dilation
    out_h, out_w = cols.shape[4], cols.shape[5]
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, _window(i * d, s, out_h), _window(j * d, s, out_w)] += cols[:, :, i, j]
    return xp[:, :, p:p + h, p:p + w]


class Conv2d(Primitive):
    """Cross-correlation with stride, symmetric zero padding and dilation.

    ``algorithm="im2col"`` builds the patch tensor and contracts it with the
    weights; ``algorithm="direct"`` loops over output positions and is the
    reference the fast path is tested against.
    """

    name = "conv2d"

    def forward(self, ctx, x, w, *maybe_bias, spec: ConvSpec, algorithm: str = "im2col"):
        _require_rank4(x, "conv2d input")
        if x.shape[1] != spec.in_channels:
            raise DimensionError(
                f"conv2d input has {x.shape[1]} channels, spec expects {spec.in_channels}"
            )
        if w.shape != spec.weight_shape:
            raise DimensionError(f"conv2d weight shape {w.shape} != {spec.weight_shape}")
        out_h, out_w = spec.output_size(x.shape[2], x.shape[3])

        ctx.spec = spec
        ctx.algorithm = algorithm
        ctx.x_shape = x.shape
        ctx.w = w
        ctx.has_bias = bool(maybe_bias)

        if algorithm == "im2col":
            cols = im2col(x, spec, out_h, out_w)
            ctx.cols = cols
            out = np.tensordot(w, cols, axes=([1, 2, 3], [1, 2, 3])).transpose(1, 0, 2, 3)
        elif algorithm == "direct":
            ctx.x = x
            out = _direct_conv(x, w, spec, out_h, out_w)
        else:
            raise ValueError(f"Unknown convolution algorithm: {algorithm}")

        if maybe_bias:
            out = out + maybe_bias[0].reshape(1, -1, 1, 1)
        return np.ascontiguousarray(out)

    def backward(self, ctx, grad_output):
        spec, w = ctx.spec, ctx.w
        if ctx.algorithm == "im2col":
            grad_w = np.tensordot(grad_output, ctx.cols, axes=([0, 2, 3], [0, 4, 5]))
            grad_cols = np.tensordot(w, grad_output, axes=([0], [1])).transpose(3, 0, 1, 2, 4, 5)
            grad_x = col2im(grad_cols, ctx.x_shape, spec)
        else:
            grad_x, grad_w = _direct_conv_backward(ctx.x, w, grad_output, spec)
        grads = [grad_x, grad_w]
        if ctx.has_bias:
            grads.append(grad_output.sum(axis=(0, 2, 3)))
        return tuple(grads)


def _direct_conv(x: np.ndarray, w: np.ndarray, spec: ConvSpec, out_h: int, out_w: int) -> np.ndarray:
    n = x.shape[0]
    kh, kw = spec.kernel
    p, s, d = spec.padding, spec.stride, spec.dilation
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, spec.out_channels, out_h, out_w), dtype=DTYPE)
    for b in range(n):
        for o in range(spec.out_channels):
            for y in range(out_h):
                for xx in range(out_w):
                    patch = xp[b, :, y * s:y * s + d * (kh - 1) + 1:d, xx * s:xx * s + d * (kw - 1) + 1:d]
                    out[b, o, y, xx] = np.sum(patch * w[o])
    return out


def _direct_conv_backward(x, w, grad_output, spec: ConvSpec):
    n, _, h, width = x.shape
    kh, kw = spec.kernel
    p, s, d = spec.padding, spec.stride, spec.dilation
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(w)
    out_h, out_w = grad_output.shape[2], grad_output.shape[3]
    for b in range(n):
        for o in range(spec.out_channels):
            for y in range(out_h):
                for xx in range(out_w):
                    g = grad_output[b, o, y, xx]
                    rows = slice(y * s, y * s + d * (kh - 1) + 1, d)
                    cols = slice(xx * s, xx * s + d * (kw - 1) + 1, d)
                    grad_w[o] += g * xp[b, :, rows, cols]
                    grad_xp[b, :, rows, cols] += g * w[o]
    return grad_xp[:, :, p:p + h, p:p + width], grad_w


_CONV2D = Conv2d()


def conv2d(
    input: Tensor,
    weights: Tensor,
    spec: ConvSpec,
    bias: Optional[Tensor] = None,
    algorithm: str = "im2col",
) -> Tensor:
    """2-D convolution of ``input`` with ``weights`` shaped (out, in, kh, kw)

    Raises:
        DimensionError: On channel or weight-shape mismatch
        GeometryError: If the output would be empty
    """
    if spec.bias and bias is None:
        raise DimensionError("ConvSpec declares a bias but none was supplied")
    operands = (input, weights) if bias is None else (input, weights, bias)
    return _CONV2D(*operands, spec=spec, algorithm=algorithm)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


class RunningStats:
    """Per-channel running mean/variance owned by one BN layer"""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.mean = np.zeros(channels, dtype=DTYPE)
        self.var = np.ones(channels, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, count: int) -> None:
        unbiased = batch_var * count / (count - 1) if count > 1 else batch_var
        self.mean = (1.0 - self.momentum) * self.mean + self.momentum * batch_mean
        self.var = (1.0 - self.momentum) * self.var + self.momentum * unbiased


class BatchNorm2d(Primitive):
    name = "batchnorm2d"

    def forward(self, ctx, x, gamma, beta, state: RunningStats, training: bool):
        _require_rank4(x, "batchnorm2d input")
        c = x.shape[1]
        if gamma.shape != (c,) or beta.shape != (c,):
            raise DimensionError(
                f"batchnorm2d affine shapes {gamma.shape}/{beta.shape} do not match {c} channels"
            )
        if training:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            state.update(mean, var, count)
        else:
            mean, var = state.mean, state.var
        inv_std = 1.0 / np.sqrt(var + state.eps)
        x_hat = (x - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        ctx.training = training
        ctx.x_hat = x_hat
        ctx.inv_std = inv_std
        ctx.gamma = gamma
        return x_hat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)

    def backward(self, ctx, grad_output):
        x_hat, inv_std, gamma = ctx.x_hat, ctx.inv_std, ctx.gamma
        c = gamma.shape[0]
        grad_gamma = np.sum(grad_output * x_hat, axis=(0, 2, 3))
        grad_beta = np.sum(grad_output, axis=(0, 2, 3))
        grad_x_hat = grad_output * gamma.reshape(1, c, 1, 1)
        if ctx.training:
            count = grad_output.shape[0] * grad_output.shape[2] * grad_output.shape[3]
            sum_g = grad_x_hat.sum(axis=(0, 2, 3), keepdims=True)
            sum_gx = (grad_x_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
            grad_x = (count * grad_x_hat - sum_g - x_hat * sum_gx) * (
                inv_std.reshape(1, c, 1, 1) / count
            )
        else:
            grad_x = grad_x_hat * inv_std.reshape(1, c, 1, 1)
        return grad_x, grad_gamma, grad_beta


_BATCHNORM2D = BatchNorm2d()


def batchnorm2d(input: Tensor, gamma: Tensor, beta: Tensor, state: RunningStats, training: bool) -> Tensor:
    """Normalize per channel over (n, h, w); eval mode uses ``state``'s running statistics"""
    return _BATCHNORM2D(input, gamma, beta, state=state, training=training)


# ---------------------------------------------------------------------------
# Activations, pooling, resampling
# ---------------------------------------------------------------------------


class ReLU(Primitive):
    name = "relu"

    def forward(self, ctx, x):
        ctx.mask = x > 0
        return np.where(ctx.mask, x, 0.0)

    def backward(self, ctx, grad_output):
        return (np.where(ctx.mask, grad_output, 0.0),)


class Exp(Primitive):
    """exp(x), floored at ``floor``; the floor region passes no gradient"""

    name = "exp"

    def forward(self, ctx, x, floor: float = 0.0):
        out = np.exp(x)
        ctx.active = out > floor
        out = np.where(ctx.active, out, floor)
        ctx.out = out
        return out

    def backward(self, ctx, grad_output):
        return (np.where(ctx.active, grad_output * ctx.out, 0.0),)


class GlobalAvgPool(Primitive):
    name = "global_avg_pool"

    def forward(self, ctx, x):
        _require_rank4(x, "global_avg_pool input")
        area = x.shape[2] * x.shape[3]
        if area < 1:
            raise GeometryError(f"global_avg_pool needs a nonempty spatial extent, got {x.shape}")
        ctx.shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, ctx, grad_output):
        area = ctx.shape[2] * ctx.shape[3]
        return (np.broadcast_to(grad_output / area, ctx.shape).copy(),)


def _interpolation_taps(n_in: int, n_out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-centre source taps (lower index, upper index, fraction) per output index"""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=DTYPE) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lower = np.floor(src).astype(np.int64)
    upper = np.minimum(lower + 1, n_in - 1)
    frac = src - lower
    return lower, upper, frac


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) matrix of bilinear weights along one axis"""
    lower, upper, frac = _interpolation_taps(n_in, n_out)
    matrix = np.zeros((n_out, n_in), dtype=DTYPE)
    rows = np.arange(n_out)
    np.add.at(matrix, (rows, lower), 1.0 - frac)
    np.add.at(matrix, (rows, upper), frac)
    return matrix


def _lerp_axis(x: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    lower, upper, frac = _interpolation_taps(x.shape[axis], n_out)
    a = np.take(x, lower, axis=axis)
    b = np.take(x, upper, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = n_out
    return a + frac.reshape(shape) * (b - a)


def bilinear_resize_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of the last two axes of ``x`` (no gradient tracking)"""
    if out_h < 1 or out_w < 1:
        raise GeometryError(f"Resize target {out_h}x{out_w} is empty")
    if x.shape[-2] < 1 or x.shape[-1] < 1:
        raise GeometryError(f"Cannot resize an empty map of shape {x.shape}")
    rows = _lerp_axis(x, x.ndim - 2, out_h)
    return _lerp_axis(rows, x.ndim - 1, out_w)


class BilinearUpsample(Primitive):
    name = "bilinear_upsample"

    def forward(self, ctx, x, out_h: int, out_w: int):
        _require_rank4(x, "bilinear_upsample input")
        ctx.in_h, ctx.in_w = x.shape[2], x.shape[3]
        ctx.out_h, ctx.out_w = out_h, out_w
        return bilinear_resize_array(x, out_h, out_w)

    def backward(self, ctx, grad_output):
        rows = interpolation_matrix(ctx.in_h, ctx.out_h)
        cols = interpolation_matrix(ctx.in_w, ctx.out_w)
        return (np.matmul(np.matmul(rows.T, grad_output), cols),)


# ---------------------------------------------------------------------------
# Channel bookkeeping
# ---------------------------------------------------------------------------


class ConcatChannels(Primitive):
    name = "concat_channels"

    def forward(self, ctx, a, b):
        _require_rank4(a, "concat_channels operand")
        _require_rank4(b, "concat_channels operand")
        if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
            raise DimensionError(f"concat_channels needs matching (n, h, w), got {a.shape} and {b.shape}")
        ctx.split = a.shape[1]
        return np.concatenate([a, b], axis=1)

    def backward(self, ctx, grad_output):
        k = ctx.split
        return grad_output[:, :k].copy(), grad_output[:, k:].copy()


class SliceChannels(Primitive):
    name = "slice_channels"

    def forward(self, ctx, x, start: int, stop: int):
        _require_rank4(x, "slice_channels input")
        ctx.shape = x.shape
        ctx.start, ctx.stop = start, stop
        return x[:, start:stop].copy()

    def backward(self, ctx, grad_output):
        grad = np.zeros(ctx.shape, dtype=DTYPE)
        grad[:, ctx.start:ctx.stop] = grad_output
        return (grad,)


class ChannelNorm(Primitive):
    """Per-pixel Euclidean norm over channels, sqrt(sum_c x^2 + eps) -> (n, 1, h, w)"""

    name = "channel_norm"

    def forward(self, ctx, x, eps: float):
        _require_rank4(x, "channel_norm input")
        norm = np.sqrt(np.sum(x * x, axis=1, keepdims=True) + eps)
        ctx.x = x
        ctx.norm = norm
        return norm

    def backward(self, ctx, grad_output):
        return (grad_output * ctx.x / ctx.norm,)


class SumAll(Primitive):
    name = "sum_all"

    def forward(self, ctx, x):
        ctx.shape = x.shape
        return np.asarray(np.sum(x), dtype=DTYPE)

    def backward(self, ctx, grad_output):
        return (np.full(ctx.shape, float(grad_output), dtype=DTYPE),)


# ---------------------------------------------------------------------------
# Elementwise arithmetic with restricted broadcasting
# ---------------------------------------------------------------------------


def broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    """Output shape of an elementwise op between ``a`` and ``b``.

    Besides identical shapes, only two broadcasts are supported: a global
    vector (n, c, 1, 1) and a single-channel map (n, 1, h, w), each against
    the full (n, c, h, w) output.

    Raises:
        DimensionError: For any other combination
    """
    if a == b:
        return a
    if len(a) != 4 or len(b) != 4 or a[0] != b[0]:
        raise DimensionError(f"Incompatible shapes for elementwise op: {a} and {b}")
    out = (a[0], max(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))
    n, c, h, w = out
    allowed = {out, (n, c, 1, 1), (n, 1, h, w)}
    if a not in allowed or b not in allowed:
        raise DimensionError(f"Incompatible shapes for elementwise op: {a} and {b}")
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


class Add(Primitive):
    name = "add"

    def forward(self, ctx, a, b):
        ctx.shapes = (a.shape, b.shape)
        broadcast_shape(a.shape, b.shape)
        return a + b

    def backward(self, ctx, grad_output):
        sa, sb = ctx.shapes
        return _unbroadcast(grad_output, sa), _unbroadcast(grad_output, sb)


class Sub(Primitive):
    name = "sub"

    def forward(self, ctx, a, b):
        ctx.shapes = (a.shape, b.shape)
        broadcast_shape(a.shape, b.shape)
        return a - b

    def backward(self, ctx, grad_output):
        sa, sb = ctx.shapes
        return _unbroadcast(grad_output, sa), -_unbroadcast(grad_output, sb)


class Mul(Primitive):
    name = "mul"

    def forward(self, ctx, a, b):
        broadcast_shape(a.shape, b.shape)
        ctx.a, ctx.b = a, b
        return a * b

    def backward(self, ctx, grad_output):
        a, b = ctx.a, ctx.b
        return _unbroadcast(grad_output * b, a.shape), _unbroadcast(grad_output * a, b.shape)


class AddScalar(Primitive):
    name = "add_scalar"

    def forward(self, ctx, a, value: float):
        return a + value

    def backward(self, ctx, grad_output):
        return (grad_output,)


class Scale(Primitive):
    """Multiply by a constant (attribute) or by a single-element tensor (second input)"""

    name = "scale"

    def forward(self, ctx, a, *factor, value: Optional[float] = None):
        if factor:
            if factor[0].size != 1:
                raise DimensionError(f"scale factor must hold one element, got shape {factor[0].shape}")
            ctx.factor_shape = factor[0].shape
            value = float(factor[0].reshape(-1)[0])
        ctx.a = a
        ctx.value = value
        return a * value

    def backward(self, ctx, grad_output):
        grad_a = grad_output * ctx.value
        if hasattr(ctx, "factor_shape"):
            grad_factor = np.full(ctx.factor_shape, np.sum(grad_output * ctx.a), dtype=DTYPE)
            return grad_a, grad_factor
        return (grad_a,)


_RELU = ReLU()
_EXP = Exp()
_GLOBAL_AVG_POOL = GlobalAvgPool()
_BILINEAR_UPSAMPLE = BilinearUpsample()
_CONCAT_CHANNELS = ConcatChannels()
_SLICE_CHANNELS = SliceChannels()
_CHANNEL_NORM = ChannelNorm()
_SUM_ALL = SumAll()
_ADD = Add()
_SUB = Sub()
_MUL = Mul()
_ADD_SCALAR = AddScalar()
_SCALE = Scale()


def relu(input: Tensor) -> Tensor:
    return _RELU(input)


def exp(input: Tensor, floor: float = 0.0) -> Tensor:
    return _EXP(input, floor=floor)


def global_avg_pool(input: Tensor) -> Tensor:
    """Mean over each channel's spatial extent -> (n, c, 1, 1)"""
    return _GLOBAL_AVG_POOL(input)


def bilinear_upsample(input: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling with half-pixel centres and edge clamping"""
    if out_h < 1 or out_w < 1:
        raise GeometryError(f"Upsample target {out_h}x{out_w} is empty")
    return _BILINEAR_UPSAMPLE(input, out_h=out_h, out_w=out_w)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    return _CONCAT_CHANNELS(a, b)


def split_channels(x: Tensor, boundary: int) -> Tuple[Tensor, Tensor]:
    """Inverse of ``concat_channels`` at channel index ``boundary``"""
    if not 0 <= boundary <= x.shape[1]:
        raise DimensionError(f"Split boundary {boundary} outside 0..{x.shape[1]}")
    c = x.shape[1]
    return (
        _SLICE_CHANNELS(x, start=0, stop=boundary),
        _SLICE_CHANNELS(x, start=boundary, stop=c),
    )


def channel_norm(input: Tensor, eps: float) -> Tensor:
    return _CHANNEL_NORM(input, eps=eps)


def sum_all(input: Tensor) -> Tensor:
    return _SUM_ALL(input)


def elementwise(op: str, a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    """Elementwise ``add``, ``sub``, ``mul`` or ``scale`` with restricted broadcasting

    Raises:
        DimensionError: If the operand shapes are not broadcast-compatible
    """
    if op == "scale":
        return scale(a, b)
    if isinstance(b, (int, float)):
        if op == "add":
            return _ADD_SCALAR(a, value=float(b))
        if op == "sub":
            return _ADD_SCALAR(a, value=-float(b))
        if op == "mul":
            return _SCALE(a, value=float(b))
        raise ValueError(f"Unknown elementwise op: {op}")
    if op == "add":
        return _ADD(a, b)
    if op == "sub":
        return _SUB(a, b)
    if op == "mul":
        return _MUL(a, b)
    raise ValueError(f"Unknown elementwise op: {op}")


def add(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Union[Tensor, Scalar]) -> Tensor:
    return elementwise("mul", a, b)


def scale(a: Tensor, factor: Union[Tensor, Scalar]) -> Tensor:
    if isinstance(factor, Tensor):
        return _SCALE(a, factor)
    return _SCALE(a, value=float(factor))


def zeros_like(x: Tensor) -> Tensor:
    return Tensor(np.zeros_like(x.data))


def fan_in(spec: ConvSpec) -> int:
    return spec.in_channels * spec.kernel[0] * spec.kernel[1]


def he_std(spec: ConvSpec) -> float:
    return math.sqrt(2.0 / max(fan_in(spec), 1))
