import numpy as np
import pytest

from context_net.core.verification import MODULE_CHECKS, OP_CHECKS, SCOPES, run_verification
from context_net.tensor import ops
from context_net.tensor.gradcheck import EvaluationError, grad_check
from context_net.tensor.tensor import Primitive, Tensor


class _WrongSquare(Primitive):
    """x^2 with a backward that is off by a factor of two"""

    name = "wrong_square"

    def forward(self, ctx, x):
        ctx.x = x
        return x * x

    def backward(self, ctx, grad_output):
        return (grad_output * ctx.x,)


class _CorruptedProduct(Primitive):
    """x * w with the gradient of the first weight scaled by 1.1"""

    name = "corrupted_product"

    def forward(self, ctx, x, w):
        ctx.x, ctx.w = x, w
        return x * w

    def backward(self, ctx, grad_output):
        grad_w = grad_output * ctx.x
        grad_w.flat[0] *= 1.1
        return grad_output * ctx.w, grad_w


class TestGradCheck:
    def test_passes_for_correct_gradient(self, rng):
        x = Tensor(rng.uniform(0.5, 1.5, size=(1, 2, 3, 3)))
        report = grad_check(lambda: ops.mul(x, x), x, target="square")
        assert report.passed
        assert report.checked == x.size
        assert report.max_rel_error < 1e-6

    def test_detects_wrong_gradient(self, rng):
        x = Tensor(rng.uniform(0.5, 1.5, size=(1, 1, 3, 3)))
        report = grad_check(lambda: _WrongSquare()(x), x, target="wrong")
        assert not report.passed
        assert report.max_rel_error == pytest.approx(0.5, rel=1e-3)
        assert report.worst_input == 0
        assert "FAIL wrong" in report.summary()

    def test_detects_single_corrupted_weight(self, rng):
        x = Tensor(rng.uniform(0.5, 1.5, size=(1, 2, 3, 3)))
        w = Tensor(rng.uniform(0.5, 1.5, size=(1, 2, 3, 3)))
        report = grad_check(lambda: _CorruptedProduct()(x, w), [x, w], projection="ones", target="product")
        assert not report.passed
        assert (report.worst_input, report.worst_index) == (1, 0)
        assert report.max_rel_error == pytest.approx(0.1 / 1.1, rel=1e-3)

    def test_subsamples_large_inputs(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 10, 10)))
        report = grad_check(lambda: ops.scale(x, 3.0), x, max_coords=10)
        assert report.checked == 10

    def test_restores_requires_grad(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 2, 2)))
        grad_check(lambda: ops.relu(x), x)
        assert x.requires_grad is False

    def test_non_finite_output_raises(self):
        x = Tensor(np.full((1, 1, 2, 2), 1.0))
        with pytest.raises(EvaluationError):
            grad_check(lambda: ops.scale(x, float("inf")), x)

    def test_rejects_non_positive_eps(self):
        x = Tensor(np.ones((1, 1, 1, 1)))
        with pytest.raises(ValueError):
            grad_check(lambda: ops.relu(x), x, eps=0.0)

    def test_relu_kinks_are_skipped(self):
        x = Tensor(np.array([7e-6, 1.0, -1.0, 2.0]).reshape(1, 1, 2, 2))
        report = grad_check(lambda: ops.relu(x), x, projection="ones")
        assert report.passed
        assert report.skipped == 1


class TestVerificationSuites:
    def test_op_suite_passes(self):
        reports = run_verification("op", seed=0)
        assert len(reports) == len(OP_CHECKS)
        failed = [r.summary() for r in reports if not r.passed]
        assert not failed

    def test_module_suite_passes(self):
        reports = run_verification("module", seed=0)
        assert len(reports) == len(MODULE_CHECKS)
        failed = [r.summary() for r in reports if not r.passed]
        assert not failed

    @pytest.mark.slow
    def test_network_suite_passes(self):
        reports = run_verification("network", seed=0)
        failed = [r.summary() for r in reports if not r.passed]
        assert not failed

    def test_unknown_scope(self):
        assert "op" in SCOPES
        with pytest.raises(ValueError):
            run_verification("everything")
