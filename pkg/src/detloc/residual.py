"""Noise residual extraction.

The main filter is a spatially adaptive Wiener shrinkage in the wavelet
domain: decompose each channel, attenuate every detail coefficient by
s2 / (s2 + sigma2) where s2 is a local signal-variance estimate and
sigma2 the assumed white-noise variance, reconstruct, and keep the
difference to the input as the residual. An SRM high-pass bank is
provided as an alternative residual source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve, uniform_filter

from .wavelet import wavedec2, waverec2

WAVELET_LEVELS = 4
VARIANCE_WINDOWS = (3, 5, 7, 9)
MIN_WAVELET_DIM = 8
SIGMA_MAX = 50.0

# Default white-noise strengths for high- and low-quality inputs.
SIGMA_HQ = 5.0
SIGMA_LQ = 10.0

# High-pass bank: first-order, second-order 3x3, and the 5x5 "KV" kernel,
# each with its standard divisor.
SRM_KERNELS = (
    np.array([[0, 0, 0], [1, -2, 1], [0, 0, 0]], dtype=np.float64) / 2.0,
    np.array([[-1, 2, -1], [2, -4, 2], [-1, 2, -1]], dtype=np.float64) / 4.0,
    np.array(
        [
            [-1, 2, -2, 2, -1],
            [2, -6, 8, -6, 2],
            [-2, 8, -12, 8, -2],
            [2, -6, 8, -6, 2],
            [-1, 2, -2, 2, -1],
        ],
        dtype=np.float64,
    )
    / 12.0,
)


@dataclass(frozen=True)
class NoiseMap:
    """Residual on the 0-255 intensity scale, same shape as its source image."""

    residual: np.ndarray
    sigma: float


@dataclass(frozen=True)
class ResidualStats:
    mean: float
    variance: float


def shrink_coefficient(c: float, sigma_hat_sq: float, sigma_sq: float) -> float:
    """Wiener attenuation of one detail coefficient: c * s2 / (s2 + sigma2).

    The factor is evaluated first so it never exceeds 1 and the result
    never exceeds |c|, even at the last floating-point ulp.
    """
    if sigma_hat_sq < 0 or sigma_sq < 0:
        raise ValueError("variances must be non-negative")
    denom = sigma_hat_sq + sigma_sq
    if denom == 0.0:
        return 0.0
    return c * (sigma_hat_sq / denom)


def _local_signal_variance(band: np.ndarray, noise_var: float) -> np.ndarray:
    # Multi-window estimate: smallest windowed energy mean, noise floor removed.
    energy = band * band
    est = None
    for size in VARIANCE_WINDOWS:
        mean = uniform_filter(energy, size=size, mode="reflect")
        est = mean if est is None else np.minimum(est, mean)
    return np.maximum(est - noise_var, 0.0)


def _shrink_band(band: np.ndarray, noise_var: float) -> np.ndarray:
    sig = _local_signal_variance(band, noise_var)
    denom = sig + noise_var
    factor = np.divide(sig, denom, out=np.zeros_like(sig), where=denom > 0)
    return band * factor


def _denoise_plane(plane: np.ndarray, noise_var: float) -> np.ndarray:
    approx, pyramid = wavedec2(plane, WAVELET_LEVELS)
    shrunk = [
        det._replace(
            horiz=_shrink_band(det.horiz, noise_var),
            vert=_shrink_band(det.vert, noise_var),
            diag=_shrink_band(det.diag, noise_var),
        )
        for det in pyramid
    ]
    return waverec2(approx, shrunk)


def _channel_view(image: np.ndarray) -> np.ndarray:
    """Normalize (H, W) or (H, W, C) input to an (H, W, C) float64 view."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W) or (H, W, C) image, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite pixels")
    return arr


def extract_residual(image: np.ndarray, sigma: float) -> NoiseMap:
    """Wavelet Wiener residual: image minus its adaptively denoised version.

    sigma is the assumed additive white Gaussian noise strength on the
    0-255 intensity scale; sigma=0 makes the filter the identity and the
    residual the zero map.
    """
    arr = _channel_view(image)
    h, w = arr.shape[:2]
    if h < MIN_WAVELET_DIM or w < MIN_WAVELET_DIM:
        raise ValueError(f"image must be at least {MIN_WAVELET_DIM}x{MIN_WAVELET_DIM}, got {h}x{w}")
    if not 0.0 <= sigma <= SIGMA_MAX:
        raise ValueError(f"sigma must lie in [0, {SIGMA_MAX}], got {sigma}")
    noise_var = float(sigma) ** 2
    residual = np.empty_like(arr)
    for ch in range(arr.shape[2]):
        residual[:, :, ch] = arr[:, :, ch] - _denoise_plane(arr[:, :, ch], noise_var)
    if np.asarray(image).ndim == 2:
        residual = residual[:, :, 0]
    return NoiseMap(residual=residual, sigma=float(sigma))


def srm_residual(image: np.ndarray) -> NoiseMap:
    """Average response of the three SRM high-pass kernels, per channel."""
    arr = _channel_view(image)
    h, w = arr.shape[:2]
    largest = max(k.shape[0] for k in SRM_KERNELS)
    if h < largest or w < largest:
        raise ValueError(f"image must be at least {largest}x{largest}, got {h}x{w}")
    residual = np.zeros_like(arr)
    for ch in range(arr.shape[2]):
        acc = np.zeros((h, w), dtype=np.float64)
        for kernel in SRM_KERNELS:
            acc += convolve(arr[:, :, ch], kernel, mode="reflect")
        residual[:, :, ch] = acc / len(SRM_KERNELS)
    if np.asarray(image).ndim == 2:
        residual = residual[:, :, 0]
    return NoiseMap(residual=residual, sigma=0.0)


def residual_stats(noise_map: NoiseMap | np.ndarray) -> ResidualStats:
    """Mean and population variance over all residual elements."""
    values = noise_map.residual if isinstance(noise_map, NoiseMap) else np.asarray(noise_map)
    if values.size == 0:
        raise ValueError("residual is empty")
    return ResidualStats(mean=float(values.mean()), variance=float(values.var()))


def default_sigma(quality: str) -> float:
    """sigma choice by input quality tier ('hq' or 'lq')."""
    if quality == "lq":
        return SIGMA_LQ
    return SIGMA_HQ
