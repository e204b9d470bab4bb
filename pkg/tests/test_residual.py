import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detloc.residual import (
    SRM_KERNELS,
    NoiseMap,
    extract_residual,
    residual_stats,
    shrink_coefficient,
    srm_residual,
)
from detloc.synthbench import SpliceSpec, make_fake, _texture


def test_shrink_examples():
    assert shrink_coefficient(4.0, 1.0, 1.0) == pytest.approx(2.0)
    assert shrink_coefficient(7.0, 0.0, 25.0) == 0.0
    assert shrink_coefficient(3.0, 9.0, 0.0) == pytest.approx(3.0)
    assert shrink_coefficient(1.0, 0.0, 0.0) == 0.0


@given(
    c=st.floats(-1e6, 1e6),
    sig=st.floats(0, 1e6),
    noise=st.floats(0, 1e6),
)
def test_shrink_non_expansive(c, sig, noise):
    out = shrink_coefficient(c, sig, noise)
    assert abs(out) <= abs(c) + 1e-12
    assert out * c >= 0  # sign preserved or zero


def test_shrink_rejects_negative_variance():
    with pytest.raises(ValueError):
        shrink_coefficient(1.0, -1.0, 0.0)


def test_constant_image_zero_residual():
    image = np.full((16, 16, 3), 128.0)
    noise = extract_residual(image, 5.0)
    assert np.abs(noise.residual).max() < 1e-6
    assert noise.residual.shape == image.shape


def test_sigma_zero_is_identity():
    rng = np.random.default_rng(0)
    image = rng.uniform(0, 255, (24, 24, 3))
    noise = extract_residual(image, 0.0)
    assert np.abs(noise.residual).max() < 1e-6


def test_injected_awgn_correlation():
    # oracle: the injected noise itself
    cors = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        clean = _texture(rng, 64)
        injected = rng.normal(0, 5.0, clean.shape)
        noise = extract_residual(clean + injected, 5.0)
        cors.append(np.corrcoef(noise.residual.ravel(), injected.ravel())[0, 1])
    assert np.mean(cors) > 0.5


def test_extract_residual_validation():
    with pytest.raises(ValueError):
        extract_residual(np.zeros((4, 4, 3)), 5.0)
    with pytest.raises(ValueError):
        extract_residual(np.full((16, 16, 3), np.nan), 5.0)
    with pytest.raises(ValueError):
        extract_residual(np.zeros((16, 16, 3)), -1.0)
    with pytest.raises(ValueError):
        extract_residual(np.zeros((16, 16, 3)), 51.0)


def test_deterministic_residual():
    rng = np.random.default_rng(4)
    image = rng.uniform(0, 255, (32, 32, 3))
    a = extract_residual(image, 5.0).residual
    b = extract_residual(image, 5.0).residual
    assert np.array_equal(a, b)


def test_energy_monotonicity():
    # adding noise must raise residual variance, averaged over seeds
    deltas = []
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        clean = _texture(rng, 64)
        noisy = clean + rng.normal(0, 5.0, clean.shape)
        v_clean = residual_stats(extract_residual(clean, 5.0)).variance
        v_noisy = residual_stats(extract_residual(noisy, 5.0)).variance
        deltas.append(v_noisy - v_clean)
    assert np.mean(deltas) > 0


def test_statistical_separation_on_synthetic_corpus():
    fake_vars, real_vars = [], []
    spec = SpliceSpec(count=40, seed=21)
    for i in range(40):
        base, fake, _ = make_fake(spec, i)
        real_vars.append(residual_stats(extract_residual(base, 5.0)).variance)
        fake_vars.append(residual_stats(extract_residual(fake, 5.0)).variance)
    assert np.mean(fake_vars) > np.mean(real_vars)


def _conv2_reflect(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # brute-force true convolution; edge-inclusive mirror padding
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(plane, ((ph, ph), (pw, pw)), mode="symmetric")
    out = np.zeros_like(plane, dtype=np.float64)
    for y in range(plane.shape[0]):
        for x in range(plane.shape[1]):
            acc = 0.0
            for i in range(kh):
                for j in range(kw):
                    acc += kernel[i, j] * padded[y + kh - 1 - i, x + kw - 1 - j]
            out[y, x] = acc
    return out


def test_srm_flat_image_zero():
    noise = srm_residual(np.full((8, 8, 3), 77.0))
    assert np.abs(noise.residual).max() < 1e-9


def test_srm_impulse_gives_flipped_kernels():
    size = 11
    image = np.zeros((size, size))
    image[size // 2, size // 2] = 1.0
    out = srm_residual(image).residual
    expected = np.zeros((size, size))
    for kernel in SRM_KERNELS:
        k = kernel[::-1, ::-1]
        kh, kw = k.shape
        y0 = size // 2 - kh // 2
        x0 = size // 2 - kw // 2
        expected[y0 : y0 + kh, x0 : x0 + kw] += k
    expected /= len(SRM_KERNELS)
    assert np.allclose(out, expected, atol=1e-12)


def test_srm_matches_bruteforce_convolution():
    rng = np.random.default_rng(5)
    image = rng.uniform(0, 255, (8, 8, 3))
    out = srm_residual(image).residual
    for ch in range(3):
        expected = np.zeros((8, 8))
        for kernel in SRM_KERNELS:
            expected += _conv2_reflect(image[:, :, ch], kernel)
        expected /= len(SRM_KERNELS)
        assert np.allclose(out[:, :, ch], expected, atol=1e-10)


def test_srm_rejects_small_images():
    with pytest.raises(ValueError):
        srm_residual(np.zeros((4, 4, 3)))


def test_stats_oracle():
    zero_stats = residual_stats(np.zeros((5, 5)))
    assert zero_stats.mean == 0.0 and zero_stats.variance == 0.0
    values = np.array([1.0, 2.0, 3.0, 4.0])
    stats = residual_stats(values)
    # direct summation oracle
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    assert stats.mean == pytest.approx(mean)
    assert stats.variance == pytest.approx(var)
    assert stats.mean == pytest.approx(2.5)
    assert stats.variance == pytest.approx(1.25)


@settings(deadline=None, max_examples=20)
@given(k=st.floats(-10, 10), seed=st.integers(0, 1000))
def test_stats_scaling_law(k, seed):
    rng = np.random.default_rng(seed)
    values = rng.normal(0, 2, (6, 6))
    base = residual_stats(values)
    scaled = residual_stats(NoiseMap(residual=k * values, sigma=0.0))
    assert scaled.mean == pytest.approx(k * base.mean, abs=1e-9)
    assert scaled.variance == pytest.approx(k * k * base.variance, rel=1e-9, abs=1e-9)


def test_stats_rejects_empty():
    with pytest.raises(ValueError):
        residual_stats(np.zeros((0,)))


def test_grayscale_input_keeps_shape():
    rng = np.random.default_rng(6)
    image = rng.uniform(0, 255, (16, 16))
    assert extract_residual(image, 5.0).residual.shape == (16, 16)
    assert srm_residual(image).residual.shape == (16, 16)
