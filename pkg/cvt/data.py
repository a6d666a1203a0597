"""Synthetic image classification: K fixed class templates plus Gaussian noise."""
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from cvt.errors import ConfigError

MAX_TEMPLATE_DRAWS = 100


@dataclass
class SyntheticDataset:
    seed: int = 0
    num_classes: int = 4
    image_size: int = 32
    channels: int = 3
    noise_scale: float = 0.5
    margin: float = 1.0
    templates: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes", f"must be >= 2, got {self.num_classes}")
        if self.image_size < 1:
            raise ConfigError("image_size", f"must be >= 1, got {self.image_size}")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale", f"must be >= 0, got {self.noise_scale}")

        rng = np.random.default_rng(self.seed)
        shape = (self.num_classes, self.channels, self.image_size, self.image_size)
        for _ in range(MAX_TEMPLATE_DRAWS):
            self.templates = rng.standard_normal(shape)
            if self.min_template_distance() > self.margin:
                return
        raise ConfigError("margin", f"could not draw templates further apart than {self.margin}")

    def min_template_distance(self) -> float:
        flat = self.templates.reshape(self.num_classes, -1)
        d = np.linalg.norm(flat[:, None, :] - flat[None, :, :], axis=-1)
        return float(d[~np.eye(self.num_classes, dtype=bool)].min())

    def sample(self, rng: np.random.Generator, batch_size: int, dtype=np.float32) -> Tuple[np.ndarray, np.ndarray]:
        labels = rng.integers(0, self.num_classes, size=batch_size)
        noise = rng.standard_normal((batch_size,) + self.templates.shape[1:])
        images = self.templates[labels] + self.noise_scale * noise
        return images.astype(dtype), labels

    def balanced(self, count: int, seed: int, dtype=np.float32) -> Tuple[np.ndarray, np.ndarray]:
        """`count` samples with classes as evenly represented as possible, in a seeded order."""
        rng = np.random.default_rng(seed)
        labels = rng.permutation(np.arange(count) % self.num_classes)
        noise = rng.standard_normal((count,) + self.templates.shape[1:])
        images = self.templates[labels] + self.noise_scale * noise
        return images.astype(dtype), labels
