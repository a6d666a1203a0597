"""Adam with decoupled weight decay, and the warmup + cosine learning-rate schedule."""
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from cvt.errors import ConfigError
from cvt.layers import Parameter


@dataclass
class OptimState:
    lr: float = 3e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.05
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr", f"must be >= 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", f"must be >= 0, got {self.weight_decay}")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError("betas", f"must lie in [0, 1), got {self.betas}")


def optimizer_step(
    params: Dict[str, Parameter],
    state: OptimState,
    no_decay: Iterable[str] = (),
    lr: Optional[float] = None,
) -> OptimState:
    """
    One in-place update of every parameter holding a gradient:

        p <- p * (1 - lr * wd)                      (skipped for names in no_decay)
        p <- p - lr * m_hat / (sqrt(v_hat) + eps)

    with bias-corrected first/second moments. Parameters are independent, so
    the iteration order does not matter.
    """
    lr = state.lr if lr is None else lr
    if lr < 0:
        raise ConfigError("lr", f"must be >= 0, got {lr}")
    skip = set(no_decay)
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step

    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = state.exp_avg.setdefault(name, np.zeros_like(p.data))
        v = state.exp_avg_sq.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g

        if state.weight_decay and name not in skip:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return state


class AdamW:
    def __init__(self, named_params, lr=3e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05, no_decay=()):
        self.params = dict(named_params)
        self.no_decay = set(no_decay)
        self.state = OptimState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)

    def step(self, lr: Optional[float] = None) -> None:
        optimizer_step(self.params, self.state, self.no_decay, lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 0) -> float:
    """Linear warmup to base_lr, then half-cosine decay to 0 at total_steps."""
    step = min(max(step, 0), total_steps)
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / max(1, total_steps - warmup_steps)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))
