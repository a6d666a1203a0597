"""Toy-scale supervised training and evaluation on a SyntheticDataset."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd

from cvt.data import SyntheticDataset
from cvt.errors import ConfigError, TrainingDivergedError
from cvt.functional import cross_entropy
from cvt.layers import Module
from cvt.optim import AdamW, cosine_lr
from cvt.tensor import Tensor, get_default_dtype, no_grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainHyperParams:
    lr: float = 3e-3
    batch_size: int = 32
    warmup_fraction: float = 0.1
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle_labels: bool = False
    log_every: int = 50

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr", f"must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction", f"must lie in [0, 1), got {self.warmup_fraction}")


@dataclass
class TrainingLog:
    records: List[Dict[str, float]] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [r["loss"] for r in self.records]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=["step", "lr", "loss", "grad_norm", "accuracy"])

    def write_jsonl(self, path: str) -> None:
        """One JSON record per line: step, lr, loss, grad_norm, accuracy."""
        self.to_frame().to_json(path, orient="records", lines=True)


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    loss: float


def grad_norm(model: Module) -> float:
    total = 0.0
    for p in model.parameters():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def train(
    model: Module,
    dataset: SyntheticDataset,
    steps: int,
    hparams: TrainHyperParams = TrainHyperParams(),
    seed: int = 0,
) -> TrainingLog:
    """
    AdamW + warmup/cosine schedule over freshly sampled batches. With
    `shuffle_labels` the labels are permuted within every batch, which removes
    any image-label signal.
    """
    model.train()
    rng = np.random.default_rng(seed)
    optimizer = AdamW(
        model.named_parameters(),
        lr=hparams.lr,
        betas=(hparams.beta1, hparams.beta2),
        eps=hparams.eps,
        weight_decay=hparams.weight_decay,
        no_decay=model.no_weight_decay(),
    )
    warmup = int(round(hparams.warmup_fraction * steps))
    log = TrainingLog()

    for step in range(steps):
        lr = cosine_lr(step, steps, hparams.lr, warmup)
        images, labels = dataset.sample(rng, hparams.batch_size, dtype=get_default_dtype())
        if hparams.shuffle_labels:
            labels = rng.permutation(labels)

        optimizer.zero_grad()
        logits = model(Tensor(images))
        loss = cross_entropy(logits, labels)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value)

        loss.backward()
        norm = grad_norm(model)
        optimizer.step(lr)

        accuracy = float(np.mean(logits.data.argmax(axis=1) == labels))
        log.records.append({"step": step, "lr": lr, "loss": value, "grad_norm": norm, "accuracy": accuracy})
        if step % hparams.log_every == 0 or step == steps - 1:
            logger.info("step %d  lr %.2e  loss %.4f  grad-norm %.3f", step, lr, value, norm)

    return log


def evaluate(
    model: Module,
    dataset: SyntheticDataset,
    num_samples: int = 1000,
    seed: int = 1,
    batch_size: int = 100,
) -> EvalResult:
    """Accuracy and mean loss on a balanced sample; batchnorm uses running stats."""
    was_training = model.training
    model.eval()
    images, labels = dataset.balanced(num_samples, seed, dtype=get_default_dtype())
    correct, loss_sum = 0, 0.0
    try:
        with no_grad():
            for start in range(0, num_samples, batch_size):
                x, y = images[start:start + batch_size], labels[start:start + batch_size]
                logits = model(Tensor(x))
                loss_sum += cross_entropy(logits, y).item() * len(y)
                correct += int(np.sum(logits.data.argmax(axis=1) == y))
    finally:
        model.train(was_training)
    return EvalResult(accuracy=correct / num_samples, loss=loss_sum / num_samples)
