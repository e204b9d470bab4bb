"""Deterministic plane resampling used for target alignment and map fusion.

Downscaling is exact area averaging (each output cell is the mean of the
source region it covers, fractional overlaps weighted); upscaling is
bilinear with half-pixel centers and edge clamping. Both are realized as
small weight matrices so a resize is two matrix products.
"""

from __future__ import annotations

import numpy as np


def area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) row-stochastic matrix averaging src cells into dst cells."""
    if dst > src:
        raise ValueError("area averaging requires dst <= src")
    ratio = src / dst
    weights = np.zeros((dst, src), dtype=np.float64)
    for i in range(dst):
        lo = i * ratio
        hi = (i + 1) * ratio
        j0 = int(np.floor(lo))
        j1 = min(int(np.ceil(hi)), src)
        for j in range(j0, j1):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                weights[i, j] = overlap / ratio
    return weights


def bilinear_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) interpolation matrix, half-pixel convention, edges clamped."""
    weights = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for i in range(dst):
        pos = (i + 0.5) * scale - 0.5
        pos = min(max(pos, 0.0), src - 1.0)
        j0 = int(np.floor(pos))
        frac = pos - j0
        j1 = min(j0 + 1, src - 1)
        weights[i, j0] += 1.0 - frac
        weights[i, j1] += frac
    return weights


def _axis_weights(src: int, dst: int) -> np.ndarray | None:
    if dst == src:
        return None
    if dst < src:
        return area_weights(src, dst)
    return bilinear_weights(src, dst)


def resize_plane(plane: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Resize a 2-D plane: area averaging per shrinking axis, bilinear per growing axis."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {plane.shape}")
    if target_h < 1 or target_w < 1:
        raise ValueError("target dimensions must be positive")
    rows = _axis_weights(plane.shape[0], target_h)
    cols = _axis_weights(plane.shape[1], target_w)
    out = plane
    if rows is not None:
        out = rows @ out
    if cols is not None:
        out = out @ cols.T
    return out


def bilinear_resize(plane: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Pure bilinear resize of a 2-D plane to the target size."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {plane.shape}")
    if target_h < 1 or target_w < 1:
        raise ValueError("target dimensions must be positive")
    out = plane
    if target_h != plane.shape[0]:
        out = bilinear_weights(plane.shape[0], target_h) @ out
    if target_w != plane.shape[1]:
        out = out @ bilinear_weights(plane.shape[1], target_w).T
    return out
