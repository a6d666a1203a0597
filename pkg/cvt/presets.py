"""Published architectures plus the toy model used for training checks."""
from typing import Callable, Dict, Sequence

from cvt.config import ConvEmbedSpec, ConvProjSpec, ModelConfig, StageConfig
from cvt.errors import ConfigError

# kernel, stride, padding per stage; padding is floor(kernel / 2)
EMBEDS = ((7, 4, 3), (3, 2, 1), (3, 2, 1))


def _build(
    name: str,
    dims: Sequence[int],
    heads: Sequence[int],
    blocks: Sequence[int],
    num_classes: int = 1000,
    mlp_ratio: float = 4.0,
) -> ModelConfig:
    stages = []
    for i, (dim, num_heads, num_blocks) in enumerate(zip(dims, heads, blocks)):
        kernel, stride, padding = EMBEDS[i]
        stages.append(
            StageConfig(
                embed=ConvEmbedSpec(kernel, stride, padding, dim),
                num_blocks=num_blocks,
                num_heads=num_heads,
                mlp_ratio=mlp_ratio,
                proj=ConvProjSpec(kernel=3, stride_q=1, stride_kv=2, padding=1),
                with_cls_token=(i == len(dims) - 1),
            )
        )
    return ModelConfig(stages=tuple(stages), num_classes=num_classes, name=name)


def cvt13() -> ModelConfig:
    return _build("cvt13", dims=(64, 192, 384), heads=(1, 3, 6), blocks=(1, 2, 10))


def cvt21() -> ModelConfig:
    return _build("cvt21", dims=(64, 192, 384), heads=(1, 3, 6), blocks=(1, 4, 16))


def cvtw24() -> ModelConfig:
    return _build("cvtw24", dims=(192, 768, 1024), heads=(3, 12, 16), blocks=(2, 2, 20))


def tiny() -> ModelConfig:
    return _build("tiny", dims=(16, 32, 64), heads=(1, 2, 4), blocks=(1, 1, 2), num_classes=4)


PRESETS: Dict[str, Callable[[], ModelConfig]] = {
    "cvt13": cvt13,
    "cvt21": cvt21,
    "cvtw24": cvtw24,
    "tiny": tiny,
}


def get_preset(name: str) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return PRESETS[name]()
