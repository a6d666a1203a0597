import numpy as np
import pytest

from cvt.config import ConvEmbedSpec, ConvProjSpec, ModelConfig, StageConfig
from cvt.presets import tiny
from cvt.tensor import Tensor, precision


def numerical_grad(fn, arrays, h=1e-5):
    """
    Central differences of the scalar `fn(*tensors)` with respect to every
    entry of every array in `arrays` (float64).
    """
    grads = []
    for k, base in enumerate(arrays):
        g = np.zeros_like(base, dtype=np.float64)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            values = []
            for delta in (h, -h):
                shifted = [a.copy() for a in arrays]
                shifted[k][idx] += delta
                values.append(fn(*[Tensor(a, dtype=np.float64) for a in shifted]).item())
            g[idx] = (values[0] - values[1]) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(fn, arrays):
    tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    fn(*tensors).backward()
    return [t.grad for t in tensors]


def assert_grads_match(fn, arrays, rtol=1e-4, atol=1e-6):
    for got, want in zip(analytic_grad(fn, arrays), numerical_grad(fn, arrays)):
        denom = np.maximum(np.abs(got) + np.abs(want), atol)
        assert np.max(np.abs(got - want) / denom) < rtol


def random_config(rng):
    """A small valid architecture with every optional feature drawn at random."""
    stages = []
    num_stages = int(rng.integers(1, 4))
    for i in range(num_stages):
        kernel = int(rng.choice([1, 3, 5, 7]))
        heads = int(rng.integers(1, 4))
        num_blocks = int(rng.integers(1, 3))
        method = str(rng.choice(["dw_bn", "linear"]))
        proj_kernel = int(rng.choice([1, 3]))
        stride_kv = 1 if method == "linear" else int(rng.choice([1, 2]))
        per_block = None
        if method == "dw_bn" and rng.random() < 0.5:
            per_block = tuple(int(s) for s in rng.choice([1, 2], size=num_blocks))
        stages.append(
            StageConfig(
                ConvEmbedSpec(kernel, int(rng.integers(1, kernel + 1)), kernel // 2, heads * int(rng.choice([2, 4]))),
                num_blocks=num_blocks,
                num_heads=heads,
                mlp_ratio=float(rng.choice([1.0, 1.5, 2.0, 4.0])),
                proj=ConvProjSpec(kernel=proj_kernel, stride_kv=stride_kv, padding=proj_kernel // 2, method=method),
                with_cls_token=bool(i == num_stages - 1 and rng.random() < 0.5),
                stride_kv_per_block=per_block,
            )
        )
    return ModelConfig(
        stages=tuple(stages),
        num_classes=int(rng.integers(2, 11)),
        input_channels=int(rng.integers(1, 4)),
        name="random",
    )


# ==========================
# Fixtures
# ==========================
@pytest.fixture
def float64():
    with precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return tiny()


@pytest.fixture
def micro_config():
    """Two small stages, cls token in the last one; fast enough for whole-model gradient checks."""
    return ModelConfig(
        stages=(
            StageConfig(ConvEmbedSpec(3, 2, 1, 4), num_blocks=1, num_heads=1, mlp_ratio=2.0),
            StageConfig(
                ConvEmbedSpec(3, 2, 1, 8),
                num_blocks=1,
                num_heads=2,
                mlp_ratio=2.0,
                proj=ConvProjSpec(),
                with_cls_token=True,
            ),
        ),
        num_classes=3,
        name="micro",
    )
