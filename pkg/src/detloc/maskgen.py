"""Ground-truth manipulation masks from real/fake pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_closing, binary_opening

from .resample import resize_plane

_STRUCT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ThresholdConfig:
    """Threshold on the normalized absolute difference, plus optional cleanup."""

    threshold: float = 0.05
    morph_cleanup: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")


def pair_to_mask(
    real_image: np.ndarray,
    fake_image: np.ndarray,
    cfg: ThresholdConfig = ThresholdConfig(),
) -> np.ndarray:
    """Binary mask: pixels whose channel-max |real - fake| / 255 reaches the threshold.

    With morph_cleanup enabled the raw mask gets one 3x3 binary closing
    followed by one opening, removing isolated speckle and hairline gaps.
    """
    real = np.asarray(real_image, dtype=np.float64)
    fake = np.asarray(fake_image, dtype=np.float64)
    if real.shape != fake.shape:
        raise ValueError(f"shape mismatch: {real.shape} vs {fake.shape}")
    diff = np.abs(real - fake)
    if diff.ndim == 3:
        diff = diff.max(axis=2)
    elif diff.ndim != 2:
        raise ValueError(f"expected 2-D or 3-D images, got shape {real.shape}")
    mask = (diff / 255.0) >= cfg.threshold
    if cfg.morph_cleanup:
        mask = binary_closing(mask, structure=_STRUCT)
        mask = binary_opening(mask, structure=_STRUCT)
    return mask.astype(np.float64)


def align_mask(mask: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Resize a mask to a prediction resolution; values stay in [0, 1].

    Downsampling is area averaging, so the result is a soft coverage map
    usable directly as a BCE target.
    """
    out = resize_plane(np.asarray(mask, dtype=np.float64), target_h, target_w)
    return np.clip(out, 0.0, 1.0)
