"""
Building blocks: a small module system and the CvT layers built on it.

`ConvEmbed` is the convolutional token embedding that opens every stage,
`ConvProjection` the depthwise-separable Q/K/V projection, `Attention` the
multi-head self-attention over those projections and `Block` the pre-norm
convolutional transformer block.
"""
import math
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from scipy.stats import truncnorm

from cvt import functional as F
from cvt.config import AttnSpec, ConvEmbedSpec, ConvProjSpec
from cvt.errors import ContractError, DimensionError
from cvt.tensor import Tensor, get_default_dtype


INIT_STD = 0.02
LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations."""
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng)


class Parameter(Tensor):
    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


# ==========================
# Module system
# ==========================
class Module:
    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # traversal
    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        for path, module in self.named_modules():
            for name, p in module._parameters.items():
                yield (f"{path}.{name}" if path else name), p

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for path, module in self.named_modules():
            for name, b in module._buffers.items():
                yield (f"{path}.{name}" if path else name), b

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # modes
    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # state
    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing {missing[:3]}, unexpected {unexpected[:3]}")
        for name, value in state.items():
            if own[name].shape != value.shape:
                raise DimensionError(f"load {name}", own[name].shape, value.shape)
            own[name][...] = value

    def no_weight_decay(self) -> set:
        """Normalization affine parameters are exempt from weight decay."""
        names = set()
        for path, module in self.named_modules():
            if isinstance(module, (LayerNorm, BatchNorm2d)):
                names.update(f"{path}.{n}" for n in module._parameters)
        return names


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: List[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, index):
        return self._items[index]


# ==========================
# Primitive layers
# ==========================
class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        dtype = get_default_dtype()
        self.weight = Parameter(trunc_normal(rng, (in_features, out_features)), dtype=dtype)
        self.bias = Parameter(np.zeros(out_features), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = LN_EPS):
        super().__init__()
        dtype = get_default_dtype()
        self.eps = eps
        self.weight = Parameter(np.ones(dim), dtype=dtype)
        self.bias = Parameter(np.zeros(dim), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.layernorm(x, self.weight, self.bias, self.eps)


class BatchNorm2d(Module):
    """Running stats start at mean 0 / var 1, so eval before training is well defined."""

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        dtype = get_default_dtype()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(channels), dtype=dtype)
        self.bias = Parameter(np.zeros(channels), dtype=dtype)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True,
    ):
        super().__init__()
        dtype = get_default_dtype()
        self.stride, self.padding, self.groups = stride, padding, groups
        shape = (out_channels, in_channels // groups, kernel, kernel)
        self.weight = Parameter(trunc_normal(rng, shape), dtype=dtype)
        self.bias = Parameter(np.zeros(out_channels), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


# ==========================
# Convolutional Token Embedding
# ==========================
class ConvEmbed(Module):
    """Overlapping strided conv, flatten the grid row-major, layernorm over channels."""

    def __init__(self, in_channels: int, spec: ConvEmbedSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        self.conv = Conv2d(in_channels, spec.out_channels, spec.kernel, rng, spec.stride, spec.padding)
        self.norm = LayerNorm(spec.out_channels)

    def forward(self, x: Tensor) -> Tuple[Tensor, int, int]:
        s = self.spec
        F.embed_output_size(x.shape[2], s.kernel, s.stride, s.padding, axis="H")
        F.embed_output_size(x.shape[3], s.kernel, s.stride, s.padding, axis="W")
        tokens, H, W = F.flatten_tokens(self.conv(x))
        return self.norm(tokens), H, W


# ==========================
# Convolutional Projection
# ==========================
class ConvProjection(Module):
    """
    Depthwise conv -> batchnorm on the spatial tokens, then a bias-free
    point-wise map on all tokens. A cls token skips the depthwise step and is
    prepended before the point-wise map.
    """

    def __init__(self, dim: int, spec: ConvProjSpec, stride: int, rng: np.random.Generator):
        super().__init__()
        self.spec, self.stride = spec, stride
        if spec.method == "dw_bn":
            self.depthwise = Conv2d(dim, dim, spec.kernel, rng, stride, spec.padding, groups=dim, bias=False)
            self.bn = BatchNorm2d(dim)
        self.pointwise = Linear(dim, dim, rng, bias=False)

    def output_grid(self, H: int, W: int) -> Tuple[int, int]:
        if self.spec.method == "linear":
            return H, W
        k, p = self.spec.kernel, self.spec.padding
        return (
            F.conv_output_size(H, k, self.stride, p, axis="H"),
            F.conv_output_size(W, k, self.stride, p, axis="W"),
        )

    def forward(self, tokens: Tensor, H: int, W: int, cls_token: Optional[Tensor] = None) -> Tensor:
        if tokens.shape[1] != H * W:
            raise ContractError(f"{tokens.shape[1]} spatial tokens do not form a {H}x{W} grid")
        x = tokens
        if self.spec.method == "dw_bn":
            x, _, _ = F.flatten_tokens(self.bn(self.depthwise(F.tokens_to_map(tokens, H, W))))
        if cls_token is not None:
            x = F.concat([cls_token, x], axis=1)
        return self.pointwise(x)


# ==========================
# Multi-head self-attention
# ==========================
class Attention(Module):
    def __init__(
        self,
        attn: AttnSpec,
        proj: ConvProjSpec,
        rng: np.random.Generator,
        drop_rate: float = 0.0,
    ):
        super().__init__()
        dim = attn.embed_dim
        self.spec, self.drop_rate, self.rng = attn, drop_rate, rng
        self.scale = 1.0 / math.sqrt(attn.head_dim)
        self.conv_proj_q = ConvProjection(dim, proj, proj.stride_q, rng)
        self.conv_proj_k = ConvProjection(dim, proj, proj.stride_kv, rng)
        self.conv_proj_v = ConvProjection(dim, proj, proj.stride_kv, rng)
        self.proj = Linear(dim, dim, rng)
        self.record_attention = False
        self.last_attention: Optional[np.ndarray] = None

    def _split_heads(self, x: Tensor) -> Tensor:
        B, T, C = x.shape
        h = self.spec.num_heads
        return F.transpose(F.reshape(x, (B, T, h, C // h)), (0, 2, 1, 3))

    def forward(self, x: Tensor, H: int, W: int) -> Tensor:
        B, T, C = x.shape
        if C != self.spec.embed_dim:
            raise DimensionError("attention", x.shape, (B, T, self.spec.embed_dim))

        cls_token = None
        if self.spec.with_cls_token:
            cls_token, x = x[:, :1], x[:, 1:]

        q = self._split_heads(self.conv_proj_q(x, H, W, cls_token))
        k = self._split_heads(self.conv_proj_k(x, H, W, cls_token))
        v = self._split_heads(self.conv_proj_v(x, H, W, cls_token))

        scores = F.scale(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), self.scale)
        weights = F.softmax(scores, axis=-1)
        if self.record_attention:
            self.last_attention = weights.data

        out = F.matmul(weights, v)
        Tq = out.shape[2]
        out = F.reshape(F.transpose(out, (0, 2, 1, 3)), (B, Tq, C))
        return F.dropout(self.proj(out), self.drop_rate, self.rng, self.training)


# ==========================
# Convolutional Transformer Block
# ==========================
class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, drop_rate: float = 0.0):
        super().__init__()
        self.drop_rate, self.rng = drop_rate, rng
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(self.fc2(F.gelu(self.fc1(x))), self.drop_rate, self.rng, self.training)


class Block(Module):
    """x + attn(norm1(x)), then x + mlp(norm2(x)); the query stride is 1 so shapes always match."""

    def __init__(
        self,
        attn: AttnSpec,
        proj: ConvProjSpec,
        mlp_hidden: int,
        rng: np.random.Generator,
        drop_rate: float = 0.0,
    ):
        super().__init__()
        dim = attn.embed_dim
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(attn, proj, rng, drop_rate=drop_rate)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_hidden, rng, drop_rate)

    def forward(self, x: Tensor, H: int, W: int) -> Tensor:
        x = x + self.attn(self.norm1(x), H, W)
        return x + self.mlp(self.norm2(x))
