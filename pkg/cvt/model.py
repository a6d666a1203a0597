"""Multi-stage CvT: stages of (token embedding, block stack), then a linear head."""
import logging
from typing import Tuple, Union

import numpy as np

from cvt import functional as F
from cvt.config import ModelConfig, StageConfig
from cvt.errors import DimensionError
from cvt.layers import Block, ConvEmbed, LayerNorm, Linear, Module, ModuleList, Parameter, trunc_normal
from cvt.tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)


class Stage(Module):
    def __init__(self, in_channels: int, config: StageConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.embed = ConvEmbed(in_channels, config.embed, rng)
        if config.with_cls_token:
            self.cls_token = Parameter(trunc_normal(rng, (1, 1, config.embed_dim)), dtype=get_default_dtype())
        self.blocks = ModuleList(
            Block(config.attn, config.block_proj(j), config.mlp_hidden(j), rng, config.drop_rate)
            for j in range(config.num_blocks)
        )

    def forward(self, x: Tensor) -> Tuple[Tensor, int, int]:
        tokens, H, W = self.embed(x)
        if self.config.with_cls_token:
            B = tokens.shape[0]
            cls = F.add(Tensor(np.zeros((B, 1, self.config.embed_dim)), dtype=tokens.dtype), self.cls_token)
            tokens = F.concat([cls, tokens], axis=1)
        for block in self.blocks:
            tokens = block(tokens, H, W)
        return tokens, H, W


class CvtModel(Module):
    """
    Hierarchical vision transformer without positional embeddings.

    The classification token joins after the final stage's embedding; its final
    representation goes through a layernorm and the linear head. Configs without
    a cls token average the normalized tokens instead.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.stages = ModuleList(
            Stage(config.in_channels(i), stage, rng) for i, stage in enumerate(config.stages)
        )
        dim = config.stages[-1].embed_dim
        self.norm = LayerNorm(dim)
        self.head = Linear(dim, config.num_classes, rng)

    def forward(self, images: Union[Tensor, np.ndarray]) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise DimensionError("forward", x.shape, (None, self.config.input_channels, None, None))

        last = len(self.stages) - 1
        for i, stage in enumerate(self.stages):
            tokens, H, W = stage(x)
            if i < last:
                x = F.tokens_to_map(tokens, H, W)

        if self.config.has_cls_token:
            features = self.norm(tokens[:, 0])
        else:
            features = F.mean(self.norm(tokens), axis=1)
        return self.head(features)

    def no_weight_decay(self) -> set:
        names = super().no_weight_decay()
        names.update(name for name, _ in self.named_parameters() if name.endswith("cls_token"))
        return names


def build_model(config: ModelConfig, seed: int = 0) -> CvtModel:
    """Deterministic initialization: the same (config, seed) gives bit-identical parameters."""
    model = CvtModel(config, np.random.default_rng(seed))
    logger.info("built %s with %d parameters (seed %d)", config.name, model.num_parameters(), seed)
    return model
