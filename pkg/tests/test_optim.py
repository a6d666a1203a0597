import math

import numpy as np
import pytest

from cvt.errors import ConfigError
from cvt.layers import Parameter
from cvt.optim import AdamW, OptimState, cosine_lr, optimizer_step


def _param(values, grad):
    p = Parameter(np.array(values, dtype=np.float64), dtype=np.float64)
    p.grad = np.array(grad, dtype=np.float64)
    return p


class TestAdamW:
    def test_first_step_moves_by_lr_times_sign(self):
        p = _param([1.0, -1.0], [0.5, -2.0])
        optimizer_step({"w": p}, OptimState(lr=0.1, weight_decay=0.0))
        # bias-corrected m/sqrt(v) is sign(g) on the first step
        np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)

    def test_zero_lr_is_a_no_op(self):
        p = _param([1.0, 2.0], [3.0, 4.0])
        optimizer_step({"w": p}, OptimState(lr=0.0))
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_decoupled_weight_decay(self):
        p = _param([2.0], [0.0])
        optimizer_step({"w": p}, OptimState(lr=0.1, weight_decay=0.5))
        # zero gradient: only the decay term acts, p *= 1 - lr * wd
        np.testing.assert_allclose(p.data, [2.0 * (1 - 0.05)])

    def test_no_decay_names_are_skipped(self):
        decayed, kept = _param([2.0], [0.0]), _param([2.0], [0.0])
        optimizer_step({"a": decayed, "b": kept}, OptimState(lr=0.1, weight_decay=0.5), no_decay={"b"})
        assert decayed.data[0] < 2.0 and kept.data[0] == 2.0

    def test_parameters_without_grad_are_untouched(self):
        p = Parameter(np.ones(2), dtype=np.float64)
        optimizer_step({"w": p}, OptimState(lr=0.1))
        np.testing.assert_array_equal(p.data, [1.0, 1.0])

    def test_negative_lr_rejected(self):
        with pytest.raises(ConfigError):
            OptimState(lr=-1.0)

    def test_minimizes_a_quadratic(self):
        p = _param([3.0, -4.0], [0.0, 0.0])
        opt = AdamW([("w", p)], lr=0.1, weight_decay=0.0)
        for _ in range(300):
            p.grad = 2.0 * p.data
            opt.step()
        assert np.abs(p.data).max() < 0.5


class TestCosineSchedule:
    def test_endpoints(self):
        assert cosine_lr(0, 100, 1e-3) == pytest.approx(1e-3)
        assert cosine_lr(100, 100, 1e-3) == pytest.approx(0.0, abs=1e-12)
        assert cosine_lr(50, 100, 1e-3) == pytest.approx(5e-4)

    def test_warmup_is_linear(self):
        assert cosine_lr(0, 100, 1.0, warmup_steps=10) == 0.0
        assert cosine_lr(5, 100, 1.0, warmup_steps=10) == pytest.approx(0.5)
        assert cosine_lr(10, 100, 1.0, warmup_steps=10) == pytest.approx(1.0)

    def test_monotone_after_warmup(self):
        values = [cosine_lr(s, 200, 1.0, 20) for s in range(20, 201)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_half_cosine_shape(self):
        assert cosine_lr(25, 100, 1.0) == pytest.approx(0.5 * (1 + math.cos(math.pi / 4)))
