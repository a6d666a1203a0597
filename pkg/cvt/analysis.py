"""
Static cost analysis of a ModelConfig: parameter counts, MAC counts and
per-layer output shapes, without instantiating weights.

Record paths are the module paths of the live model, so a record's params
equal the sizes of the live parameters under that path.

Counting conventions
  params: every learnable scalar of the reference build (conv-embedding bias,
          batchnorm and layernorm affine, cls token, attention-output / MLP /
          head biases; no depthwise or point-wise projection bias).
  flops:  multiply-accumulates of convs (depthwise included, spatial tokens
          only), linear maps (all tokens, cls included), Q.K^T and A.V, and
          the head. Norms, activations and softmax are free.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import pandas as pd

from cvt.config import ModelConfig
from cvt.functional import conv_output_size, embed_output_size

logger = logging.getLogger(__name__)

InputSize = Union[int, Tuple[int, int]]


@dataclass(frozen=True)
class LayerCost:
    path: str
    kind: str
    params: int
    flops: int
    shape: Optional[Tuple[int, ...]]


@dataclass
class CostReport:
    name: str
    input_hw: Optional[Tuple[int, int]]
    records: List[LayerCost] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.records)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.records)

    def record(self, path: str) -> LayerCost:
        return next(r for r in self.records if r.path == path)

    def stage_outputs(self) -> List[Tuple[int, ...]]:
        return [r.shape for r in self.records if r.kind == "stage"]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "Layer": r.path,
                    "Kind": r.kind,
                    "Params": r.params,
                    "FLOPs": r.flops,
                    "Output Shape": format_shape(r.shape),
                }
                for r in self.records
            ],
            columns=["Layer", "Kind", "Params", "FLOPs", "Output Shape"],
        )

    def totals_line(self) -> str:
        params, flops = self.total_params, self.total_flops
        return f"Total  params {params} ({human(params, 'M')})  flops {flops} ({human(flops, 'G')})"


# ==========================
# Formatting
# ==========================
def human(value: int, unit: str) -> str:
    scale = {"K": 1e3, "M": 1e6, "G": 1e9}[unit]
    return f"{value / scale:.2f}{unit}"


def format_shape(shape: Optional[Sequence[int]]) -> str:
    return "-" if shape is None else "x".join(str(s) for s in shape)


def format_table(report: CostReport) -> str:
    df = report.to_frame()
    header = f"{report.name} @ {format_shape(report.input_hw)}"
    return "\n".join([header, df.to_string(index=False), report.totals_line()])


def format_records(report: CostReport) -> str:
    """One tab-separated line per layer: path, kind, params, flops, shape."""
    lines = [f"{r.path}\t{r.kind}\t{r.params}\t{r.flops}\t{format_shape(r.shape)}" for r in report.records]
    return "\n".join(lines)


# ==========================
# Walker
# ==========================
def _as_hw(input_hw: Optional[InputSize]) -> Optional[Tuple[int, int]]:
    if input_hw is None:
        return None
    if isinstance(input_hw, int):
        return input_hw, input_hw
    return int(input_hw[0]), int(input_hw[1])


def _grid(H, W, kernel, stride, padding, size_fn=conv_output_size):
    if H is None:
        return None, None
    return size_fn(H, kernel, stride, padding, axis="H"), size_fn(W, kernel, stride, padding, axis="W")


def _analyze(config: ModelConfig, input_hw: Optional[InputSize]) -> CostReport:
    hw = _as_hw(input_hw)
    report = CostReport(config.name, hw)
    geometric = hw is not None
    H, W = hw if geometric else (None, None)

    def add(path, kind, params, flops=0, shape=None):
        report.records.append(
            LayerCost(path, kind, int(params), int(flops) if geometric else 0, shape if geometric else None)
        )

    for i, stage in enumerate(config.stages):
        prefix = f"stages.{i}"
        c_in, D, e = config.in_channels(i), stage.embed_dim, stage.embed
        H, W = _grid(H, W, e.kernel, e.stride, e.padding, embed_output_size)
        T = H * W if geometric else 0
        cls = 1 if stage.with_cls_token else 0

        add(f"{prefix}.embed.conv", "conv2d", e.kernel ** 2 * c_in * D + D, T * D * e.kernel ** 2 * c_in, (H, W, D))
        add(f"{prefix}.embed.norm", "layernorm", 2 * D, 0, (T, D))
        if cls:
            add(f"{prefix}.cls_token", "cls_token", D, 0, (T + cls, D))

        for j in range(stage.num_blocks):
            bp = f"{prefix}.blocks.{j}"
            proj, hidden = stage.block_proj(j), stage.mlp_hidden(j)
            tokens = T + cls
            add(f"{bp}.norm1", "layernorm", 2 * D, 0, (tokens, D))

            counts = {}
            for which, stride in (("q", proj.stride_q), ("k", proj.stride_kv), ("v", proj.stride_kv)):
                path = f"{bp}.attn.conv_proj_{which}"
                if proj.method == "dw_bn":
                    k = proj.kernel
                    Hp, Wp = _grid(H, W, k, stride, proj.padding)
                    Tp = Hp * Wp if geometric else 0
                    add(f"{path}.depthwise", "dwconv", k * k * D, Tp * D * k * k, (Hp, Wp, D))
                    add(f"{path}.bn", "batchnorm", 2 * D, 0, (Hp, Wp, D))
                else:
                    Tp = T
                counts[which] = Tp + cls
                add(f"{path}.pointwise", "linear", D * D, counts[which] * D * D, (counts[which], D))

            Tq, Tkv = counts["q"], counts["k"]
            add(f"{bp}.attn.qk", "attn_qk", 0, Tq * Tkv * D, (stage.num_heads, Tq, Tkv))
            add(f"{bp}.attn.av", "attn_av", 0, Tq * Tkv * D, (Tq, D))
            add(f"{bp}.attn.proj", "linear", D * D + D, Tq * D * D, (Tq, D))
            add(f"{bp}.norm2", "layernorm", 2 * D, 0, (tokens, D))
            add(f"{bp}.mlp.fc1", "linear", D * hidden + hidden, tokens * D * hidden, (tokens, hidden))
            add(f"{bp}.mlp.fc2", "linear", hidden * D + D, tokens * hidden * D, (tokens, D))

        add(prefix, "stage", 0, 0, (H, W, D))

    D, K = config.stages[-1].embed_dim, config.num_classes
    add("norm", "layernorm", 2 * D, 0, (D,))
    add("head", "linear", D * K + K, D * K, (K,))

    logger.debug("%s: %d params, %d flops", config.name, report.total_params, report.total_flops)
    return report


# ==========================
# Public operations
# ==========================
def count_params(config: ModelConfig) -> CostReport:
    """Per-layer and total learnable scalars; independent of input size."""
    return _analyze(config, None)


def count_flops(config: ModelConfig, input_hw: InputSize = 224) -> CostReport:
    """Per-layer MACs, params and output shapes at `input_hw`."""
    return _analyze(config, input_hw)


def shape_trace(config: ModelConfig, input_hw: InputSize = 224) -> List[Tuple[str, Tuple[int, ...]]]:
    """(layer path, output shape) in execution order."""
    return [(r.path, r.shape) for r in _analyze(config, input_hw).records]
