"""Orthogonal 2-D discrete wavelet transform with periodized boundaries.

Implements the multi-level separable DWT used by the noise residual
filter. The filter bank is the 8-tap Daubechies pair; boundary handling
is periodization, with odd-length axes padded to even length by edge
replication before each level and cropped back on reconstruction. For
even lengths the transform is exactly orthogonal, so the round trip is
perfect reconstruction up to floating-point error.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

# 8-tap Daubechies scaling filter (4 vanishing moments), synthesis low-pass,
# normalized so the coefficients sum to sqrt(2).
_REC_LO = np.array(
    [
        0.2303778133088552,
        0.7148465705525415,
        0.6308807679295904,
        -0.02798376941698385,
        -0.18703481171888114,
        0.030841381835986965,
        0.032883011666982945,
        -0.010597401784997278,
    ],
    dtype=np.float64,
)

_DEC_LO = _REC_LO[::-1].copy()
_REC_HI = (_DEC_LO * np.where(np.arange(_DEC_LO.size) % 2 == 0, 1.0, -1.0)).copy()
_DEC_HI = _REC_HI[::-1].copy()

_TAPS = _REC_LO.size


class SubbandSet(NamedTuple):
    """Detail subbands of one decomposition level plus the shape they came from."""

    horiz: np.ndarray
    vert: np.ndarray
    diag: np.ndarray
    parent_shape: tuple[int, int]


def _pad_even(x: np.ndarray) -> np.ndarray:
    pads = [(0, dim % 2) for dim in x.shape]
    if any(p[1] for p in pads):
        x = np.pad(x, pads, mode="edge")
    return x


def _analysis_axis(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(_TAPS)[None, :]) % n
    windows = x[..., idx]
    lo = windows @ _DEC_LO
    hi = windows @ _DEC_HI
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _synthesis_axis(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    half = lo.shape[-1]
    n = 2 * half
    out = np.zeros(lo.shape[:-1] + (n,), dtype=np.float64)
    base = 2 * np.arange(half)
    for m in range(_TAPS):
        pos = (base + m) % n
        out[..., pos] += lo * _DEC_LO[m] + hi * _DEC_HI[m]
    return np.moveaxis(out, -1, axis)


def dwt2(x: np.ndarray) -> tuple[np.ndarray, SubbandSet]:
    """One 2-D decomposition step: returns (approx, details)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {x.shape}")
    parent_shape = x.shape
    x = _pad_even(x)
    lo, hi = _analysis_axis(x, 0)
    ll, lh = _analysis_axis(lo, 1)
    hl, hh = _analysis_axis(hi, 1)
    return ll, SubbandSet(horiz=lh, vert=hl, diag=hh, parent_shape=parent_shape)


def idwt2(approx: np.ndarray, details: SubbandSet) -> np.ndarray:
    """Invert one decomposition step and crop back to the recorded shape."""
    lo = _synthesis_axis(approx, details.horiz, 1)
    hi = _synthesis_axis(details.vert, details.diag, 1)
    x = _synthesis_axis(lo, hi, 0)
    h, w = details.parent_shape
    return x[:h, :w]


def wavedec2(x: np.ndarray, levels: int) -> tuple[np.ndarray, list[SubbandSet]]:
    """Multi-level decomposition. Details are ordered finest to coarsest."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    approx = np.asarray(x, dtype=np.float64)
    pyramid: list[SubbandSet] = []
    for _ in range(levels):
        approx, det = dwt2(approx)
        pyramid.append(det)
    return approx, pyramid


def waverec2(approx: np.ndarray, pyramid: list[SubbandSet]) -> np.ndarray:
    x = approx
    for det in reversed(pyramid):
        x = idwt2(x, det)
    return x
