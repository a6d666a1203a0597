"""
Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation is a `Function` subclass (see `cvt.functional`).
Applying one records it with a monotonically increasing index; `backward()`
gathers the recorded operations reachable from the loss into a `GradTape` and
replays them in exact reverse recording order.
"""
import itertools
import logging
import threading
from contextlib import contextmanager
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

import settings
from cvt.errors import ContractError, NonFiniteError

logger = logging.getLogger(__name__)

DTYPES = {"float32": np.dtype(np.float32), "float64": np.dtype(np.float64)}

_local = threading.local()
_sequence = itertools.count()
_default_dtype = DTYPES[settings.DTYPE]
_debug = settings.DEBUG


# ==========================
# Runtime switches
# ==========================
def get_default_dtype() -> np.dtype:
    return _default_dtype


@contextmanager
def precision(dtype: Union[str, np.dtype]):
    """Temporarily switch the process-wide default precision (float32 / float64)."""
    global _default_dtype
    previous = _default_dtype
    _default_dtype = DTYPES[np.dtype(dtype).name]
    try:
        yield
    finally:
        _default_dtype = previous


@contextmanager
def debug_mode(enabled: bool = True):
    """Assert finiteness after every op while active."""
    global _debug
    previous = _debug
    _debug = enabled
    try:
        yield
    finally:
        _debug = previous


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable op recording on the current thread."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


# ==========================
# Operations
# ==========================
class Function:
    """
    Base class for differentiable operations.

    `forward` receives the raw arrays of the inputs and returns the output array;
    `backward` receives dL/d(output) and returns one gradient array (or None) per input.
    Whatever backward needs is saved on the instance during forward.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs
        self.index = -1

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError(f"{type(self).__name__} has no backward")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        func = cls(*inputs)
        out = func.forward(*(t.data for t in inputs), **kwargs)

        if _debug and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{cls.__name__} produced non-finite values")

        track = is_grad_enabled() and any(t.requires_grad for t in inputs)
        if not track:
            return Tensor(out, dtype=out.dtype)

        func.index = next(_sequence)
        return Tensor(out, dtype=out.dtype, requires_grad=True, _creator=func)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out the axes numpy broadcasting expanded, so grad matches shape."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class TapeEntry(NamedTuple):
    """One recorded op; `index` doubles as the id of its output tensor."""

    index: int
    op: Function
    input_ids: Tuple[int, ...]
    output_id: int


class GradTape:
    """Recorded operations reachable from one output, in recording order."""

    def __init__(self, entries: List[TapeEntry]):
        self.entries = entries

    @classmethod
    def from_output(cls, output: "Tensor") -> "GradTape":
        seen = set()
        found: List[Function] = []
        stack = [output._creator] if output._creator is not None else []
        while stack:
            func = stack.pop()
            if id(func) in seen:
                continue
            seen.add(id(func))
            found.append(func)
            for t in func.inputs:
                if t._creator is not None and id(t._creator) not in seen:
                    stack.append(t._creator)

        found.sort(key=lambda f: f.index)
        # tensors are named by the index of the op that produced them; leaves are -1
        entries = [
            TapeEntry(
                f.index,
                f,
                tuple(t._creator.index if t._creator is not None else -1 for t in f.inputs),
                f.index,
            )
            for f in found
        ]
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def replay_backward(self, output: "Tensor", seed: np.ndarray) -> None:
        pending: Dict[int, np.ndarray] = {id(output._creator): seed}
        for entry in reversed(self.entries):
            func = entry.op
            grad = pending.pop(id(func), None)
            if grad is None:
                continue
            for t, g in zip(func.inputs, func.backward(grad)):
                if g is None or not t.requires_grad:
                    continue
                if t._creator is None:
                    t._accumulate(g)
                else:
                    key = id(t._creator)
                    pending[key] = pending[key] + g if key in pending else g


# ==========================
# Tensor
# ==========================
class Tensor:
    """
    A dense float array, optionally tracking gradients.

    Leaves created with `requires_grad=True` receive gradients in `.grad`,
    accumulated across `backward()` calls until `zero_grad()`.
    """

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Optional[Union[str, np.dtype]] = None,
        _creator: Optional[Function] = None,
    ):
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._creator = _creator

    # properties
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._creator is None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # gradients
    def _accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        seed = np.ones(self.shape, dtype=self.dtype)
        if self._creator is None:
            if self.requires_grad:
                self._accumulate(seed)
            return
        tape = GradTape.from_output(self)
        logger.debug("backward over %d recorded ops", len(tape))
        tape.replay_backward(self, seed)

    # operators
    def __add__(self, other):
        from cvt import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from cvt import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from cvt import functional as F
        return F.sub(other, self)

    def __neg__(self):
        from cvt import functional as F
        return F.scale(self, -1.0)

    def __mul__(self, other):
        from cvt import functional as F
        if isinstance(other, (int, float)):
            return F.scale(self, float(other))
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        from cvt import functional as F
        return F.scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        from cvt import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from cvt import functional as F
        return F.getitem(self, index)

    def reshape(self, *shape):
        from cvt import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from cvt import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from cvt import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from cvt import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
