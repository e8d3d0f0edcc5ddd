import numpy as np
import pytest

from context_net.tensor.tensor import Parameter
from context_net.training.optim import DivergenceError, OptimState, ScheduleError, poly_lr, sgd_step
from context_net.utils.config import OptimConfig


class TestPolySchedule:
    def test_endpoints(self):
        assert poly_lr(0.01, 0, 100) == pytest.approx(0.01)
        assert poly_lr(0.01, 100, 100) == 0.0

    def test_midpoint(self):
        assert poly_lr(0.01, 50, 100, power=0.9) == pytest.approx(0.01 * 0.5 ** 0.9)
        assert poly_lr(0.005, 50, 100) == pytest.approx(0.0026794, abs=1e-7)

    def test_monotone_decreasing(self):
        rates = [poly_lr(1.0, it, 20) for it in range(21)]
        assert all(a > b for a, b in zip(rates, rates[1:]))

    @pytest.mark.parametrize("iteration", [-1, 101])
    def test_out_of_range(self, iteration):
        with pytest.raises(ScheduleError):
            poly_lr(0.01, iteration, 100)


class TestSgdStep:
    def _state(self, params, **overrides):
        cfg = OptimConfig(**{"base_lr": 0.1, "momentum": 0.9, "weight_decay": 0.01, **overrides})
        return OptimState.create(params, cfg, total_iters=10)

    def test_momentum_and_decay(self):
        w = Parameter(np.array([1.0, -2.0]))
        state = self._state([w])
        grad = np.array([0.5, 0.5])

        sgd_step([w], [grad], state, lr=0.1)
        v1 = grad + 0.01 * np.array([1.0, -2.0])
        np.testing.assert_allclose(w.data, np.array([1.0, -2.0]) - 0.1 * v1)

        before = w.data.copy()
        sgd_step([w], [grad], state, lr=0.1)
        v2 = 0.9 * v1 + grad + 0.01 * before
        np.testing.assert_allclose(w.data, before - 0.1 * v2)
        assert state.iteration == 2

    def test_no_decay_parameters(self):
        alpha = Parameter(np.array([1.0]), decay=False)
        state = self._state([alpha])
        sgd_step([alpha], [np.zeros(1)], state, lr=0.1)
        np.testing.assert_array_equal(alpha.data, [1.0])

    def test_default_rate_follows_schedule(self):
        w = Parameter(np.array([0.0]), decay=False)
        state = self._state([w], momentum=0.0)
        state.iteration = 5
        sgd_step([w], [np.array([1.0])], state)
        assert w.data[0] == pytest.approx(-poly_lr(0.1, 5, 10))

    def test_missing_gradient_counts_as_zero(self):
        w = Parameter(np.array([2.0]), decay=False)
        state = self._state([w])
        sgd_step([w], [None], state, lr=0.1)
        np.testing.assert_array_equal(w.data, [2.0])

    def test_non_finite_gradient(self):
        w = Parameter(np.array([1.0, 1.0]), name="stem.weight")
        state = self._state([w])
        with pytest.raises(DivergenceError) as exc_info:
            sgd_step([w], [np.array([np.nan, 0.0])], state, lr=0.1)
        assert exc_info.value.diagnostics["nonfinite_grad_elements"] == {"stem.weight": 1}
        np.testing.assert_array_equal(w.data, [1.0, 1.0])

    def test_length_mismatch(self):
        w = Parameter(np.array([1.0]))
        state = self._state([w])
        with pytest.raises(ValueError):
            sgd_step([w], [], state)
