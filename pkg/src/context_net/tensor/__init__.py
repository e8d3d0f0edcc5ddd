from .tensor import (
    DimensionError,
    GeometryError,
    Parameter,
    Primitive,
    Tape,
    TapeError,
    Tensor,
    TensorError,
)
from .ops import ConvSpec, RunningStats
from .gradcheck import EvaluationError, GradCheckReport, grad_check

__all__ = [
    'Tensor', 'Parameter', 'Primitive', 'Tape', 'ConvSpec', 'RunningStats',
    'TensorError', 'DimensionError', 'GeometryError', 'TapeError',
    'EvaluationError', 'GradCheckReport', 'grad_check',
]
