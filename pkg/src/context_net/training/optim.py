import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..tensor.tensor import Parameter
from ..utils.config import OptimConfig

logger = logging.getLogger(__name__)


class ScheduleError(ValueError):
    """Raised when the schedule is queried outside [0, total_iters]"""

    pass


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss, gradient or parameter

    Attributes:
        iteration: Iteration at which the problem was detected
        diagnostics: Offending quantity names and summary values
    """

    def __init__(self, message: str, iteration: Optional[int] = None, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.iteration = iteration
        self.diagnostics = diagnostics or {}


def poly_lr(base_lr: float, iteration: int, total_iters: int, power: float = 0.9) -> float:
    """base_lr * (1 - iteration / total_iters) ** power

    Raises:
        ScheduleError: If ``iteration`` is negative or exceeds ``total_iters``
    """
    if total_iters <= 0:
        raise ScheduleError(f"total_iters must be positive, got {total_iters}")
    if iteration < 0 or iteration > total_iters:
        raise ScheduleError(f"Iteration {iteration} outside [0, {total_iters}]")
    return base_lr * (1.0 - iteration / total_iters) ** power


class OptimState(BaseModel):
    """Momentum-SGD state: one velocity buffer per parameter plus schedule settings"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    velocity: List[np.ndarray]
    base_lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 1e-4
    iteration: int = 0
    total_iters: int = Field(default=1, ge=1)
    poly_power: float = 0.9

    @classmethod
    def create(cls, params: Sequence[Parameter], cfg: OptimConfig, total_iters: int) -> "OptimState":
        return cls(
            velocity=[np.zeros_like(p.data) for p in params],
            base_lr=cfg.base_lr,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
            total_iters=total_iters,
            poly_power=cfg.poly_power,
        )

    def current_lr(self) -> float:
        return poly_lr(self.base_lr, self.iteration, self.total_iters, self.poly_power)


def sgd_step(
    params: Sequence[Parameter],
    grads: Sequence[Optional[np.ndarray]],
    state: OptimState,
    lr: Optional[float] = None,
) -> None:
    """v = momentum * v + grad + wd * param; param -= lr * v, in place.

    Parameters with ``decay=False`` skip weight decay. A missing gradient
    counts as zero. ``lr`` defaults to the poly schedule at ``state.iteration``,
    which is advanced by one.

    Raises:
        DivergenceError: If any gradient is non-finite
    """
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ValueError("params, grads and velocity buffers must have equal length")
    rate = state.current_lr() if lr is None else lr

    bad = {}
    for index, (param, grad) in enumerate(zip(params, grads)):
        if grad is not None and not np.all(np.isfinite(grad)):
            bad[param.name or f"param[{index}]"] = int(np.sum(~np.isfinite(grad)))
    if bad:
        raise DivergenceError(
            f"Non-finite gradients at iteration {state.iteration}",
            iteration=state.iteration,
            diagnostics={"nonfinite_grad_elements": bad},
        )

    for index, (param, grad) in enumerate(zip(params, grads)):
        step = np.zeros_like(param.data) if grad is None else grad
        if grad is not None and grad.shape != param.data.shape:
            raise ValueError(f"Gradient shape {grad.shape} != parameter shape {param.data.shape}")
        if param.decay and state.weight_decay:
            step = step + state.weight_decay * param.data
        state.velocity[index] = state.momentum * state.velocity[index] + step
        param.data = param.data - rate * state.velocity[index]
    state.iteration += 1
