"""Synthetic splice corpus: procedural textures with elliptical donor regions.

Each fake composites a donor texture into a base texture through a
feathered elliptical alpha, then perturbs the region with white noise
and a small color shift, so both the blend boundary (semantic cue) and
the noise inconsistency (residual cue) are present. Ground truth is the
alpha > 0.5 region. Reals are untouched bases with all-zero masks.

Per-sample RNG streams derive from (seed, index), so generation is
deterministic and order-independent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

FAKE_LABELS = ("df", "ff", "fs", "nt")


@dataclass(frozen=True)
class SpliceSpec:
    count: int = 10
    seed: int = 0
    size: int = 64
    split: str = "train"
    center_jitter: float = 0.10  # ellipse center offset range, fraction of size
    axis_range: tuple[float, float] = (0.20, 0.36)  # semi-axes, fraction of size
    feather: float = 2.0  # alpha transition width in pixels
    sigma_s: float = 8.0  # AWGN strength inside the region
    color_shift: float = 25.0  # max per-channel shift inside the region
    base_dir: str | None = None  # optional directory of user-supplied base PNGs

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.size < 16:
            raise ValueError("size must be >= 16")
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.sigma_s < 0:
            raise ValueError("sigma_s must be >= 0")
        lo, hi = self.axis_range
        if not 0 < lo <= hi:
            raise ValueError("axis_range must be 0 < lo <= hi")
        if hi + self.center_jitter >= 0.5:
            raise ValueError("ellipse may leave the image: shrink axis_range or center_jitter")


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth random texture, 3 channels, values well inside [0, 255]."""
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    img = np.zeros((size, size, 3), dtype=np.float64)
    for ch in range(3):
        plane = np.zeros((size, size), dtype=np.float64)
        for _ in range(3):
            fy, fx = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi, size=2)
            amp = rng.uniform(10, 35)
            plane += amp * np.sin(2 * np.pi * (fy * yy + phase[0]) ) * np.cos(
                2 * np.pi * (fx * xx + phase[1])
            )
        plane += gaussian_filter(rng.normal(0, 18, size=(size, size)), sigma=2.5)
        img[:, :, ch] = plane
    img += rng.uniform(90, 160, size=(1, 1, 3))
    return np.clip(img, 20.0, 235.0)


def _ellipse_alpha(rng: np.random.Generator, spec: SpliceSpec) -> np.ndarray:
    size = spec.size
    cy = size / 2 + rng.uniform(-spec.center_jitter, spec.center_jitter) * size
    cx = size / 2 + rng.uniform(-spec.center_jitter, spec.center_jitter) * size
    ay = rng.uniform(*spec.axis_range) * size
    ax = rng.uniform(*spec.axis_range) * size
    theta = rng.uniform(0, np.pi)
    yy, xx = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5, indexing="ij")
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    r = np.sqrt((u / ax) ** 2 + (v / ay) ** 2)
    alpha = np.clip((1.0 - r) * min(ay, ax) / max(spec.feather, 1e-6), 0.0, 1.0)
    return alpha


def _load_base_pool(base_dir: str) -> list[np.ndarray]:
    from . import dataio

    paths = sorted(Path(base_dir).glob("*.png"))
    if not paths:
        raise ValueError(f"no PNG base images found in {base_dir}")
    return [dataio.load_image(p) for p in paths]


def _base_image(
    rng: np.random.Generator, spec: SpliceSpec, pool: list[np.ndarray] | None
) -> np.ndarray:
    if pool is None:
        return _texture(rng, spec.size)
    from .resample import resize_plane

    img = pool[int(rng.integers(len(pool)))]
    if img.shape[:2] != (spec.size, spec.size):
        img = np.stack(
            [resize_plane(img[:, :, c], spec.size, spec.size) for c in range(3)], axis=2
        )
    return img


def make_fake(
    spec: SpliceSpec, index: int, pool: list[np.ndarray] | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build one (base, fake, mask) triple for the given sample index."""
    rng = np.random.default_rng([spec.seed, index])
    base = _base_image(rng, spec, pool)
    donor = _texture(np.random.default_rng([spec.seed, index, 1]), spec.size)
    alpha = _ellipse_alpha(rng, spec)

    shift = rng.uniform(-spec.color_shift, spec.color_shift, size=(1, 1, 3))
    region = donor + shift
    noise = rng.normal(0.0, spec.sigma_s, size=base.shape) if spec.sigma_s > 0 else 0.0
    a3 = alpha[:, :, None]
    fake = base * (1.0 - a3) + (region + noise) * a3
    fake = np.clip(fake, 0.0, 255.0)
    mask = (alpha > 0.5).astype(np.float64)
    return base, fake, mask


def generate(spec: SpliceSpec, out_dir: str | Path) -> list[dict]:
    """Write count fakes + count reals with masks and return manifest records."""
    from . import dataio

    out = Path(out_dir)
    images = out / "images"
    masks = out / "masks"
    images.mkdir(parents=True, exist_ok=True)
    masks.mkdir(parents=True, exist_ok=True)
    pool = _load_base_pool(spec.base_dir) if spec.base_dir else None

    records: list[dict] = []
    for i in range(spec.count):
        base, fake, mask = make_fake(spec, i, pool)
        tag = f"{spec.split}_{i:05d}"
        real_path = images / f"{tag}_real.png"
        fake_path = images / f"{tag}_fake.png"
        real_mask_path = masks / f"{tag}_real.png"
        fake_mask_path = masks / f"{tag}_fake.png"
        dataio.save_image(real_path, base)
        dataio.save_image(fake_path, fake)
        dataio.save_mask(real_mask_path, np.zeros_like(mask))
        dataio.save_mask(fake_mask_path, mask)
        records.append(
            {
                "image_path": str(real_path.relative_to(out)),
                "label": "real",
                "mask_path": str(real_mask_path.relative_to(out)),
                "split": spec.split,
                "quality": "hq",
            }
        )
        records.append(
            {
                "image_path": str(fake_path.relative_to(out)),
                "label": FAKE_LABELS[i % len(FAKE_LABELS)],
                "mask_path": str(fake_mask_path.relative_to(out)),
                "pair_path": str(real_path.relative_to(out)),
                "split": spec.split,
                "quality": "hq",
            }
        )

    manifest = out / "manifest.jsonl"
    dataio.write_manifest(manifest, records)
    with (out / "generator_spec.json").open("w", encoding="utf-8") as fh:
        json.dump(asdict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return records
