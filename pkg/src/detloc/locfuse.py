"""Fusing the three predicted maps into one localization map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .resample import bilinear_resize

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class FusionWeights:
    """Per-scale weights, shallow to deep. Normalized to sum 1 on construction."""

    gamma1: float = 0.1
    gamma2: float = 0.2
    gamma3: float = 0.7

    def __post_init__(self) -> None:
        g = (self.gamma1, self.gamma2, self.gamma3)
        if any(v < 0 for v in g):
            raise ValueError("fusion weights must be non-negative")
        s = sum(g)
        if s == 0:
            raise ValueError("fusion weights must not all be zero")
        if abs(s - 1.0) > _NORM_TOL:
            object.__setattr__(self, "gamma1", self.gamma1 / s)
            object.__setattr__(self, "gamma2", self.gamma2 / s)
            object.__setattr__(self, "gamma3", self.gamma3 / s)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.gamma1, self.gamma2, self.gamma3)


def fuse_maps(
    maps,
    target_h: int,
    target_w: int,
    weights: FusionWeights = FusionWeights(),
) -> np.ndarray:
    """Weighted sum of the three maps after bilinear upsampling to target size."""
    if len(maps) != 3:
        raise ValueError(f"expected three maps, got {len(maps)}")
    if target_h < 1 or target_w < 1:
        raise ValueError("target dimensions must be positive")
    fused = np.zeros((target_h, target_w), dtype=np.float64)
    for gamma, m in zip(weights.as_tuple(), maps):
        fused += gamma * bilinear_resize(np.asarray(m, dtype=np.float64), target_h, target_w)
    return np.clip(fused, 0.0, 1.0)


def binarize(localization_map: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Per-pixel >= comparison to a threshold in (0, 1)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(localization_map, dtype=np.float64) >= threshold).astype(np.float64)
