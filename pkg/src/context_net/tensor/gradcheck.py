import contextlib
import logging
from typing import Callable, ContextManager, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from .tensor import Tape, Tensor, TensorError

logger = logging.getLogger(__name__)


class EvaluationError(TensorError):
    """Raised when the checked function produces non-finite values"""

    pass


class GradCheckReport(BaseModel):
    """Outcome of one finite-difference comparison

    Attributes:
        target: Name of the checked function
        max_rel_error: Worst relative error over the checked coordinates
        tolerance: Pass threshold for ``max_rel_error``
        passed: Whether every checked coordinate is within tolerance
        checked: Number of coordinates compared
        skipped: Coordinates skipped as non-smooth (two step sizes disagree)
        worst_input: Index of the input holding the worst coordinate
        worst_index: Flat index of the worst coordinate
    """

    target: str
    max_rel_error: float
    tolerance: float
    passed: bool
    checked: int
    skipped: int = 0
    worst_input: Optional[int] = None
    worst_index: Optional[int] = None

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.target}: max_rel_error={self.max_rel_error:.3e} "
            f"(tol {self.tolerance:.0e}, checked {self.checked}, skipped {self.skipped})"
        )


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Union[Tensor, Sequence[Tensor]],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int = 64,
    seed: int = 0,
    target: str = "fn",
    projection: str = "random",
    context: Optional[ContextManager] = None,
    relative_floor: float = 1e-3,
) -> GradCheckReport:
    """Compare backward against central differences (f(x+eps) - f(x-eps)) / (2 eps).

    ``fn`` is called with no arguments and reads ``inputs`` by closure. Its
    output is reduced to a scalar by summation against a fixed projection
    (all ones, or a seeded Gaussian so that sum-invariant maps such as batch
    normalization still have informative gradients). Inputs larger than
    ``max_coords`` are checked on a seeded random subset of coordinates.

    Each coordinate is also differenced at eps/2; where the two estimates
    disagree beyond ``tol`` the perturbation straddles a kink and the
    coordinate is skipped. Relative errors use the denominator
    max(|analytic|, |numeric|, relative_floor * largest numeric gradient).

    Args:
        context: Reusable context manager entered around every evaluation

    Raises:
        EvaluationError: If ``fn`` returns non-finite values
        ValueError: If ``eps`` is not positive
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    tensors: List[Tensor] = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    ctx = context if context is not None else contextlib.nullcontext()
    rng = np.random.default_rng(seed)

    saved_flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()

    try:
        with ctx:
            with Tape() as tape:
                out = fn()
            _require_finite(out.data, target)
            if projection == "random":
                weights = rng.standard_normal(out.shape)
            elif projection == "ones":
                weights = np.ones(out.shape)
            else:
                raise ValueError(f"Unknown projection: {projection}")
            tape.backward(out, grad=weights)
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

        def evaluate() -> float:
            with ctx:
                value = fn()
            _require_finite(value.data, target)
            return float(np.sum(value.data * weights))

        owners, indices, numeric, halved, exact = [], [], [], [], []
        for k, t in enumerate(tensors):
            flat = t.data.reshape(-1)
            count = flat.size
            chosen = np.arange(count) if count <= max_coords else np.sort(
                rng.choice(count, size=max_coords, replace=False)
            )
            for idx in chosen:
                original = flat[idx]
                samples = []
                for step in (eps, -eps, eps / 2, -eps / 2):
                    flat[idx] = original + step
                    samples.append(evaluate())
                flat[idx] = original
                owners.append(k)
                indices.append(int(idx))
                numeric.append((samples[0] - samples[1]) / (2 * eps))
                halved.append((samples[2] - samples[3]) / eps)
                exact.append(analytic[k].reshape(-1)[idx])
    finally:
        for t, flag in zip(tensors, saved_flags):
            t.requires_grad = flag

    numeric_arr = np.asarray(numeric)
    halved_arr = np.asarray(halved)
    exact_arr = np.asarray(exact)
    if numeric_arr.size == 0:
        return GradCheckReport(target=target, max_rel_error=0.0, tolerance=tol, passed=True, checked=0)

    floor = relative_floor * float(np.max(np.abs(numeric_arr))) + 1e-10
    smooth_denom = np.maximum(np.maximum(np.abs(numeric_arr), np.abs(halved_arr)), floor)
    smooth = np.abs(numeric_arr - halved_arr) <= tol * smooth_denom

    denom = np.maximum(np.maximum(np.abs(exact_arr), np.abs(numeric_arr)), floor)
    rel = np.where(smooth, np.abs(exact_arr - numeric_arr) / denom, 0.0)

    checked = int(np.sum(smooth))
    worst = int(np.argmax(rel))
    max_rel = float(rel[worst]) if checked else 0.0
    report = GradCheckReport(
        target=target,
        max_rel_error=max_rel,
        tolerance=tol,
        passed=checked > 0 and max_rel < tol,
        checked=checked,
        skipped=int(numeric_arr.size - checked),
        worst_input=owners[worst] if checked else None,
        worst_index=indices[worst] if checked else None,
    )
    logger.debug(report.summary())
    return report


def _require_finite(values: np.ndarray, target: str) -> None:
    if not np.all(np.isfinite(values)):
        raise EvaluationError(f"{target} produced non-finite output")
