"""
Declarative architecture description.

A ModelConfig is an ordered list of StageConfigs. Stage i consumes the
previous stage's embedding dimension (the image channels for stage 0), so
channel chaining holds by construction.
"""
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

import yaml

from cvt.errors import ConfigError

PROJ_METHODS = ("dw_bn", "linear")


def _check(condition: bool, name: str, message: str) -> None:
    if not condition:
        raise ConfigError(name, message)


def _strict(cls, data: Dict[str, Any], where: str) -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigError(where, f"expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}" if where else unknown[0], "unknown key")
    return data


# ==========================
# Layer specs
# ==========================
@dataclass(frozen=True)
class ConvEmbedSpec:
    """Overlapping strided conv that opens a stage: kernel s, stride s - o, padding p."""

    kernel: int
    stride: int
    padding: int
    out_channels: int

    def __post_init__(self):
        _check(self.kernel >= 1, "kernel", f"must be >= 1, got {self.kernel}")
        _check(1 <= self.stride <= self.kernel, "stride", f"must lie in [1, kernel], got {self.stride}")
        _check(self.padding >= 0, "padding", f"must be >= 0, got {self.padding}")
        _check(self.out_channels >= 1, "out_channels", f"must be >= 1, got {self.out_channels}")


@dataclass(frozen=True)
class ConvProjSpec:
    """Q/K/V projection: depthwise conv + batchnorm + point-wise map, or plain linear."""

    kernel: int = 3
    stride_q: int = 1
    stride_kv: int = 2
    padding: int = 1
    method: str = "dw_bn"

    def __post_init__(self):
        _check(self.method in PROJ_METHODS, "method", f"must be one of {PROJ_METHODS}, got {self.method!r}")
        _check(self.kernel >= 1 and self.kernel % 2 == 1, "kernel", f"must be odd, got {self.kernel}")
        _check(self.stride_q == 1, "stride_q", f"must be 1, got {self.stride_q}")
        _check(self.stride_kv in (1, 2), "stride_kv", f"must be 1 or 2, got {self.stride_kv}")
        _check(self.padding >= 0, "padding", f"must be >= 0, got {self.padding}")
        if self.method == "linear":
            _check(self.stride_kv == 1, "stride_kv", "linear projection cannot subsample keys/values")


@dataclass(frozen=True)
class AttnSpec:
    embed_dim: int
    num_heads: int
    with_cls_token: bool = False

    def __post_init__(self):
        _check(self.num_heads >= 1, "num_heads", f"must be >= 1, got {self.num_heads}")
        _check(
            self.embed_dim % self.num_heads == 0,
            "num_heads",
            f"embed_dim {self.embed_dim} is not divisible by {self.num_heads} heads",
        )

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


# ==========================
# Stage / model
# ==========================
@dataclass(frozen=True)
class StageConfig:
    embed: ConvEmbedSpec
    num_blocks: int
    num_heads: int
    mlp_ratio: float = 4.0
    proj: ConvProjSpec = field(default_factory=ConvProjSpec)
    with_cls_token: bool = False
    stride_kv_per_block: Optional[Tuple[int, ...]] = None
    mlp_ratio_per_block: Optional[Tuple[float, ...]] = None
    drop_rate: float = 0.0

    def __post_init__(self):
        _check(self.num_blocks >= 1, "num_blocks", f"must be >= 1, got {self.num_blocks}")
        _check(self.mlp_ratio > 0, "mlp_ratio", f"must be positive, got {self.mlp_ratio}")
        _check(0.0 <= self.drop_rate < 1.0, "drop_rate", f"must lie in [0, 1), got {self.drop_rate}")
        AttnSpec(self.embed_dim, self.num_heads)

        if self.stride_kv_per_block is not None:
            object.__setattr__(self, "stride_kv_per_block", tuple(self.stride_kv_per_block))
            _check(
                len(self.stride_kv_per_block) == self.num_blocks,
                "stride_kv_per_block",
                f"needs {self.num_blocks} entries, got {len(self.stride_kv_per_block)}",
            )
            for s in self.stride_kv_per_block:
                replace(self.proj, stride_kv=s)
        if self.mlp_ratio_per_block is not None:
            object.__setattr__(self, "mlp_ratio_per_block", tuple(self.mlp_ratio_per_block))
            _check(
                len(self.mlp_ratio_per_block) == self.num_blocks,
                "mlp_ratio_per_block",
                f"needs {self.num_blocks} entries, got {len(self.mlp_ratio_per_block)}",
            )
            _check(all(r > 0 for r in self.mlp_ratio_per_block), "mlp_ratio_per_block", "ratios must be positive")

    @property
    def embed_dim(self) -> int:
        return self.embed.out_channels

    @property
    def attn(self) -> AttnSpec:
        return AttnSpec(self.embed_dim, self.num_heads, self.with_cls_token)

    def block_proj(self, index: int) -> ConvProjSpec:
        if self.stride_kv_per_block is None:
            return self.proj
        return replace(self.proj, stride_kv=self.stride_kv_per_block[index])

    def block_mlp_ratio(self, index: int) -> float:
        if self.mlp_ratio_per_block is None:
            return self.mlp_ratio
        return self.mlp_ratio_per_block[index]

    def mlp_hidden(self, index: int) -> int:
        return int(self.embed_dim * self.block_mlp_ratio(index))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StageConfig":
        data = dict(_strict(cls, data, ""))
        _check("embed" in data, "embed", "is required")
        _check("num_blocks" in data, "num_blocks", "is required")
        _check("num_heads" in data, "num_heads", "is required")
        data["embed"] = ConvEmbedSpec(**_strict(ConvEmbedSpec, data["embed"], "embed"))
        if "proj" in data:
            data["proj"] = ConvProjSpec(**_strict(ConvProjSpec, data["proj"], "proj"))
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError("stage", str(e)) from e


@dataclass(frozen=True)
class ModelConfig:
    stages: Tuple[StageConfig, ...]
    num_classes: int = 1000
    input_channels: int = 3
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        _check(len(self.stages) >= 1, "stages", "at least one stage is required")
        _check(self.num_classes >= 1, "num_classes", f"must be >= 1, got {self.num_classes}")
        _check(self.input_channels >= 1, "input_channels", f"must be >= 1, got {self.input_channels}")
        for i, stage in enumerate(self.stages):
            _check(
                not stage.with_cls_token or i == len(self.stages) - 1,
                f"stages[{i}].with_cls_token",
                "a classification token is only allowed in the final stage",
            )

    @property
    def total_blocks(self) -> int:
        return sum(s.num_blocks for s in self.stages)

    def in_channels(self, stage_index: int) -> int:
        return self.input_channels if stage_index == 0 else self.stages[stage_index - 1].embed_dim

    @property
    def has_cls_token(self) -> bool:
        return self.stages[-1].with_cls_token

    # ==========================
    # Serialization
    # ==========================
    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for stage in data["stages"]:
            for key in ("stride_kv_per_block", "mlp_ratio_per_block"):
                if stage[key] is not None:
                    stage[key] = list(stage[key])
        data["stages"] = list(data["stages"])
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        data = dict(_strict(cls, data, ""))
        _check(isinstance(data.get("stages"), list), "stages", "must be a list of stage mappings")
        stages: List[StageConfig] = []
        for i, raw in enumerate(data["stages"]):
            try:
                stages.append(StageConfig.from_dict(raw))
            except ConfigError as e:
                raise ConfigError(f"stages[{i}].{e.field}", str(e).split(": ", 1)[-1]) from e
        data["stages"] = tuple(stages)
        return cls(**data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ModelConfig":
        return cls.from_dict(yaml.safe_load(text))


def with_stride_kv(config: ModelConfig, stride: int) -> ModelConfig:
    """Same architecture with every key/value projection using `stride`."""
    stages = tuple(
        replace(s, proj=replace(s.proj, stride_kv=stride), stride_kv_per_block=None) for s in config.stages
    )
    return replace(config, stages=stages, name=f"{config.name}-kv{stride}")
