from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cocaclaw.data import WindowBatch


@dataclass
class AugmentConfig:
    """Jittering / scaling rates. `enabled=False` is the NoAug variant."""

    jitter_ratio: float = 0.35
    scale_ratio: float = 0.8
    enabled: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.jitter_ratio < 0:
            raise ValueError(f"jitter_ratio must be >= 0, got {self.jitter_ratio}")
        if self.scale_ratio < 0:
            raise ValueError(f"scale_ratio must be >= 0, got {self.scale_ratio}")


def jitter(batch: WindowBatch, sigma: float, rng: np.random.Generator) -> WindowBatch:
    """Add i.i.d. Normal(0, sigma^2) noise to every element."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    noise = rng.normal(loc=0.0, scale=sigma, size=batch.windows.shape)
    return batch.with_windows(batch.windows + noise)


def scale(batch: WindowBatch, sigma: float, rng: np.random.Generator) -> WindowBatch:
    """Multiply each window by one factor f ~ Normal(1, sigma^2)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    factors = rng.normal(loc=1.0, scale=sigma, size=len(batch))
    return batch.with_windows(batch.windows * factors[:, None, None])


def expand_training_set(batch: WindowBatch, cfg: AugmentConfig, rng: np.random.Generator) -> WindowBatch:
    """original + jitter(original) + scale(original); the original alone when disabled.

    Call once per epoch with the same stream to get fresh copies every epoch.
    """
    if not cfg.enabled:
        return batch
    return WindowBatch.concat(
        [
            batch,
            jitter(batch, cfg.jitter_ratio, rng),
            scale(batch, cfg.scale_ratio, rng),
        ]
    )


def view_pair(batch: WindowBatch, cfg: AugmentConfig, rng: np.random.Generator) -> tuple[WindowBatch, WindowBatch]:
    # positive pair of the augmentation-contrast variant: (jittered, scaled)
    return jitter(batch, cfg.jitter_ratio, rng), scale(batch, cfg.scale_ratio, rng)
