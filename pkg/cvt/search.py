"""
Architecture search space over a base config: per block, the key/value
projection stride in {1, 2} and the MLP expansion ratio in {2, 4}.

Only costs are enumerated; nothing is trained or selected.
"""
import logging
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from cvt.analysis import CostReport, InputSize, count_flops
from cvt.config import ModelConfig
from cvt.errors import ConfigError

logger = logging.getLogger(__name__)

STRIDE_CHOICES = (1, 2)
RATIO_CHOICES = (2, 4)


@dataclass(frozen=True)
class SearchCandidate:
    strides: Tuple[int, ...]
    ratios: Tuple[int, ...]
    base: str
    label: str = "sample"

    def choice_vector(self) -> str:
        return " ".join(f"{s}/{r}" for s, r in zip(self.strides, self.ratios))


@dataclass(frozen=True)
class SearchSummary:
    min_params: int
    max_params: int
    min_flops: int
    max_flops: int


def apply_candidate(base: ModelConfig, candidate: SearchCandidate) -> ModelConfig:
    if len(candidate.strides) != base.total_blocks or len(candidate.ratios) != base.total_blocks:
        raise ConfigError("candidate", f"choice vectors need {base.total_blocks} entries")
    stages, offset = [], 0
    for stage in base.stages:
        n = stage.num_blocks
        stages.append(
            replace(
                stage,
                stride_kv_per_block=candidate.strides[offset:offset + n],
                mlp_ratio_per_block=tuple(float(r) for r in candidate.ratios[offset:offset + n]),
            )
        )
        offset += n
    return replace(base, stages=tuple(stages), name=f"{base.name}-{candidate.label}")


def uniform_candidate(base: ModelConfig, stride: int, ratio: int, label: str) -> SearchCandidate:
    n = base.total_blocks
    return SearchCandidate((stride,) * n, (ratio,) * n, base.name, label)


def bottleneck_candidate(base: ModelConfig) -> SearchCandidate:
    """Stride 2 / ratio 2 in the first and last stages, stride 1 / ratio 4 in the middle ones."""
    strides, ratios = [], []
    last = len(base.stages) - 1
    for i, stage in enumerate(base.stages):
        outer = i in (0, last)
        strides += [2 if outer else 1] * stage.num_blocks
        ratios += [2 if outer else 4] * stage.num_blocks
    return SearchCandidate(tuple(strides), tuple(ratios), base.name, "bottleneck")


def sample_candidates(base: ModelConfig, sample: int, seed: int) -> List[SearchCandidate]:
    rng = np.random.default_rng(seed)
    n = base.total_blocks
    return [
        SearchCandidate(
            tuple(int(s) for s in rng.choice(STRIDE_CHOICES, size=n)),
            tuple(int(r) for r in rng.choice(RATIO_CHOICES, size=n)),
            base.name,
            f"sample{k}",
        )
        for k in range(sample)
    ]


def enumerate_search_space(
    base: ModelConfig,
    sample: int,
    seed: int = 0,
    input_hw: InputSize = 224,
    extra: Sequence[SearchCandidate] = (),
) -> List[Tuple[SearchCandidate, CostReport]]:
    """
    The two extremes first ("all-max": stride 2 / ratio 4 everywhere, which is
    the base preset; "all-min": stride 2 / ratio 2), then `extra`, then
    `sample` seeded random candidates.
    """
    if sample < 1:
        raise ConfigError("samples", f"must be >= 1, got {sample}")
    candidates = [
        uniform_candidate(base, 2, 4, "all-max"),
        uniform_candidate(base, 2, 2, "all-min"),
        *extra,
        *sample_candidates(base, sample, seed),
    ]
    results = [(c, count_flops(apply_candidate(base, c), input_hw)) for c in candidates]
    logger.info("enumerated %d candidates of %s", len(results), base.name)
    return results


def summarize(results: Sequence[Tuple[SearchCandidate, CostReport]]) -> SearchSummary:
    params = [r.total_params for _, r in results]
    flops = [r.total_flops for _, r in results]
    return SearchSummary(min(params), max(params), min(flops), max(flops))
