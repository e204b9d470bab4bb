"""File formats: PNG images/masks, raw float arrays with JSON sidecars, manifests."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

VALID_LABELS = ("real", "df", "ff", "fs", "nt")
VALID_SPLITS = ("train", "val", "test")
LABEL_INDEX = {name: i for i, name in enumerate(VALID_LABELS)}


class DataError(Exception):
    """Malformed input data: bad manifest, missing file, shape mismatch."""


@dataclass(frozen=True)
class ManifestRecord:
    image_path: Path
    label: str
    split: str
    mask_path: Path | None = None
    pair_path: Path | None = None
    quality: str = "hq"

    @property
    def class_index(self) -> int:
        return LABEL_INDEX[self.label]

    @property
    def is_fake(self) -> bool:
        return self.label != "real"


def load_image(path: str | Path) -> np.ndarray:
    """RGB image as float64 (H, W, 3) on the 0-255 scale."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64)


def save_image(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image), 0, 255)
    Image.fromarray(np.round(arr).astype(np.uint8), mode="RGB").save(path)


def load_mask(path: str | Path) -> np.ndarray:
    """Single-channel mask PNG as float64 {0, 1}."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return (arr > 127).astype(np.float64)


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    arr = (np.asarray(mask) > 0.5).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path)


def save_gray_map(path: str | Path, values01: np.ndarray) -> None:
    """Probability map to an 8-bit grayscale PNG: value = round(255 * p)."""
    arr = np.round(np.clip(np.asarray(values01), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def save_float_array(base_path: str | Path, arr: np.ndarray, **meta) -> None:
    """Raw little-endian float32 dump plus a JSON sidecar describing the shape."""
    base = Path(base_path)
    arr = np.asarray(arr)
    if arr.ndim == 2:
        height, width = arr.shape
        channels = 1
    elif arr.ndim == 3:
        height, width, channels = arr.shape
    else:
        raise ValueError(f"expected a 2-D or 3-D array, got shape {arr.shape}")
    base.with_suffix(".f32").write_bytes(arr.astype("<f4").tobytes())
    sidecar = {"height": int(height), "width": int(width), "channels": int(channels)}
    sidecar.update(meta)
    with base.with_suffix(".json").open("w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_float_array(base_path: str | Path) -> tuple[np.ndarray, dict]:
    base = Path(base_path)
    with base.with_suffix(".json").open("r", encoding="utf-8") as fh:
        meta = json.load(fh)
    raw = np.frombuffer(base.with_suffix(".f32").read_bytes(), dtype="<f4")
    shape = (meta["height"], meta["width"], meta["channels"])
    if meta["channels"] == 1:
        shape = shape[:2]
    return raw.reshape(shape).astype(np.float64), meta


def write_manifest(path: str | Path, records: list[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    """Parse a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    records: list[ManifestRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                label = raw["label"]
                split = raw["split"]
                image_path = raw["image_path"]
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
            if label not in VALID_LABELS:
                raise DataError(f"{path}:{lineno}: unknown label {label!r}")
            if split not in VALID_SPLITS:
                raise DataError(f"{path}:{lineno}: unknown split {split!r}")
            quality = raw.get("quality", "hq")
            if quality not in ("hq", "lq"):
                raise DataError(f"{path}:{lineno}: unknown quality {quality!r}")

            def _resolve(p):
                if p is None:
                    return None
                p = Path(p)
                return p if p.is_absolute() else root / p

            records.append(
                ManifestRecord(
                    image_path=_resolve(image_path),
                    label=label,
                    split=split,
                    mask_path=_resolve(raw.get("mask_path")),
                    pair_path=_resolve(raw.get("pair_path")),
                    quality=quality,
                )
            )
    if not records:
        raise DataError(f"manifest is empty: {path}")
    return records


def write_json(path: str | Path, data: dict) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def append_jsonl(fh, record: dict) -> None:
    fh.write(json.dumps(record, sort_keys=True) + "\n")
