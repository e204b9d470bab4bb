import numpy as np
import pytest

from detloc.locfuse import FusionWeights, binarize, fuse_maps
from oracles import bilinear_bruteforce


def _random_map_set(rng):
    return [rng.uniform(size=(2, 2)), rng.uniform(size=(4, 4)), rng.uniform(size=(8, 8))]


class TestFusionWeights:
    def test_paper_defaults_pass_unchanged(self):
        w = FusionWeights(0.1, 0.2, 0.7)
        assert w.as_tuple() == (0.1, 0.2, 0.7)

    def test_normalization(self):
        w = FusionWeights(1.0, 1.0, 2.0)
        assert w.as_tuple() == pytest.approx((0.25, 0.25, 0.5))

    def test_idempotent(self):
        w = FusionWeights(3.0, 1.0, 1.0)
        again = FusionWeights(*w.as_tuple())
        assert again.as_tuple() == w.as_tuple()

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            FusionWeights(-0.1, 0.5, 0.6)
        with pytest.raises(ValueError):
            FusionWeights(0.0, 0.0, 0.0)


class TestFuseMaps:
    def test_degenerate_weights_equal_upsampled_deep_map(self):
        from detloc.resample import bilinear_resize

        rng = np.random.default_rng(0)
        maps = _random_map_set(rng)
        fused = fuse_maps(maps, 16, 16, FusionWeights(0.0, 0.0, 1.0))
        assert np.array_equal(fused, bilinear_resize(maps[2], 16, 16))
        assert np.abs(fused - bilinear_bruteforce(maps[2], 16, 16)).max() < 1e-9

    def test_constant_maps_stay_constant(self):
        maps = [np.full((2, 2), 0.4), np.full((4, 4), 0.4), np.full((8, 8), 0.4)]
        fused = fuse_maps(maps, 12, 12, FusionWeights(0.3, 0.4, 0.3))
        assert np.allclose(fused, 0.4, atol=1e-12)

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(1)
        maps = _random_map_set(rng)
        weights = FusionWeights(0.1, 0.2, 0.7)
        fused = fuse_maps(maps, 16, 16, weights)
        expected = (
            0.1 * bilinear_bruteforce(maps[0], 16, 16)
            + 0.2 * bilinear_bruteforce(maps[1], 16, 16)
            + 0.7 * bilinear_bruteforce(maps[2], 16, 16)
        )
        assert np.abs(fused - expected).max() < 1e-9

    def test_output_within_map_extremes(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            maps = _random_map_set(rng)
            fused = fuse_maps(maps, 32, 32)
            lo = min(m.min() for m in maps)
            hi = max(m.max() for m in maps)
            assert fused.min() >= lo - 1e-12
            assert fused.max() <= hi + 1e-12

    def test_validation(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError):
            fuse_maps(_random_map_set(rng)[:2], 8, 8)
        with pytest.raises(ValueError):
            fuse_maps(_random_map_set(rng), 0, 8)


class TestBinarize:
    def test_above_threshold(self):
        assert np.array_equal(binarize(np.full((3, 3), 0.6)), np.ones((3, 3)))

    def test_below_threshold(self):
        assert np.array_equal(binarize(np.full((3, 3), 0.4)), np.zeros((3, 3)))

    def test_matches_comparison_loop(self):
        rng = np.random.default_rng(4)
        values = rng.uniform(size=(7, 5))
        out = binarize(values, 0.35)
        for y in range(7):
            for x in range(5):
                assert out[y, x] == (1.0 if values[y, x] >= 0.35 else 0.0)

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            binarize(np.zeros((2, 2)), 0.0)
        with pytest.raises(ValueError):
            binarize(np.zeros((2, 2)), 1.0)
