"""Convolutional vision transformer: autograd engine, model, cost analysis and toy training."""
import settings  # noqa: F401  (thread caps must be exported before numpy loads)

from cvt.analysis import CostReport, count_flops, count_params, shape_trace
from cvt.checkpoint import load_checkpoint, save_checkpoint
from cvt.config import AttnSpec, ConvEmbedSpec, ConvProjSpec, ModelConfig, StageConfig, with_stride_kv
from cvt.model import CvtModel, build_model
from cvt.presets import PRESETS, cvt13, cvt21, cvtw24, get_preset, tiny
from cvt.tensor import Tensor, no_grad, precision

__all__ = [
    "AttnSpec",
    "ConvEmbedSpec",
    "ConvProjSpec",
    "CostReport",
    "CvtModel",
    "ModelConfig",
    "PRESETS",
    "StageConfig",
    "Tensor",
    "build_model",
    "count_flops",
    "count_params",
    "cvt13",
    "cvt21",
    "cvtw24",
    "get_preset",
    "load_checkpoint",
    "no_grad",
    "precision",
    "save_checkpoint",
    "shape_trace",
    "tiny",
    "with_stride_kv",
]
