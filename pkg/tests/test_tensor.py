import threading

import numpy as np
import pytest

from conftest import assert_grads_match
from cvt import functional as F
from cvt.errors import ContractError, NonFiniteError
from cvt.tensor import GradTape, Tensor, debug_mode, get_default_dtype, is_grad_enabled, no_grad, precision


class TestTensorBasics:
    def test_default_dtype_is_float32(self):
        assert Tensor([1.0, 2.0]).dtype == np.float32
        assert get_default_dtype() == np.float32

    def test_precision_switch_is_scoped(self):
        with precision("float64"):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_leaf_flags(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        assert x.is_leaf and not y.is_leaf
        assert y.requires_grad

    def test_constants_are_not_tracked(self):
        y = Tensor(np.ones(3)) * 2.0
        assert y.is_leaf and not y.requires_grad


class TestBackward:
    def test_sum_of_product(self):
        # y = sum(x * w), so dy/dx = w and dy/dw = x
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True, dtype=np.float64)
        w = Tensor([4.0, 5.0, 6.0], requires_grad=True, dtype=np.float64)
        (x * w).sum().backward()
        np.testing.assert_allclose(x.grad, [4.0, 5.0, 6.0])
        np.testing.assert_allclose(w.grad, [1.0, 2.0, 3.0])

    def test_non_scalar_backward_raises(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_gradients_accumulate_until_zeroed(self):
        x = Tensor([1.0, -2.0], requires_grad=True, dtype=np.float64)
        (x * 3.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0, 6.0])
        x.zero_grad()
        (x * 3.0).sum().backward()
        np.testing.assert_allclose(x.grad, [3.0, 3.0])

    def test_shared_subexpression_gets_both_paths(self):
        # z = y * y with y = 2x; dz/dx = 8x
        x = Tensor([1.5, -0.5], requires_grad=True, dtype=np.float64)
        y = x * 2.0
        (y * y).sum().backward()
        np.testing.assert_allclose(x.grad, 8.0 * np.array([1.5, -0.5]))

    def test_broadcast_add_reduces_gradient(self):
        x = Tensor(np.ones((4, 3)), requires_grad=True, dtype=np.float64)
        b = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
        (x + b).sum().backward()
        np.testing.assert_allclose(b.grad, [4.0, 4.0, 4.0])

    @pytest.mark.parametrize("key", [(slice(None), 0), (slice(None), slice(0, 1)), (slice(None), slice(1, None))])
    def test_slice_gradient_after_many_recorded_ops(self, key):
        # enough ops are recorded first that every sequence number exceeds the batch size
        for _ in range(50):
            Tensor(np.ones(2), requires_grad=True).sum()
        x = Tensor(np.arange(24.0).reshape(2, 3, 4), requires_grad=True, dtype=np.float64)
        x[key].sum().backward()
        expected = np.zeros((2, 3, 4))
        expected[key] = 1.0
        np.testing.assert_array_equal(x.grad, expected)

    def test_cls_token_split_gradients(self, rng):
        for _ in range(10):
            Tensor(np.ones(1), requires_grad=True).sum()
        weights = rng.standard_normal((2, 3, 4))

        def fn(x):
            head, rest = x[:, :1], x[:, 1:]
            return (F.concat([rest, head], axis=1) * Tensor(weights, dtype=np.float64)).sum()

        assert_grads_match(fn, [rng.standard_normal((2, 3, 4))])

    def test_composite_matches_finite_differences(self, rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))

        def fn(x, w):
            return F.gelu(F.matmul(x, w)).mean()

        assert_grads_match(fn, [a, b])


class TestTape:
    def test_entries_follow_recording_order(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        z = y + x
        loss = z.sum()
        tape = GradTape.from_output(loss)
        indices = [e.index for e in tape.entries]
        assert indices == sorted(indices)
        assert len(tape) == 3

    def test_leaf_inputs_are_marked(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = (x * 2.0).sum()
        first = GradTape.from_output(loss).entries[0]
        assert first.input_ids == (-1,)

    def test_unreachable_ops_are_excluded(self):
        x = Tensor(np.ones(3), requires_grad=True)
        _unused = x * 5.0
        loss = (x * 2.0).sum()
        assert len(GradTape.from_output(loss)) == 2


class TestGradModes:
    def test_no_grad_stops_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad and y.is_leaf
        assert is_grad_enabled()

    def test_no_grad_is_per_thread(self):
        seen = {}

        def worker():
            seen["enabled"] = is_grad_enabled()

        with no_grad():
            t = threading.Thread(target=worker)
            t.start()
            t.join()
        assert seen["enabled"] is True

    def test_debug_mode_flags_non_finite(self):
        x = Tensor([1.0, 0.0])
        with debug_mode():
            with pytest.raises(NonFiniteError):
                F.scale(x, np.inf)
