"""Two-step training: backbone + semantic heads first, then everything.

The pipeline is manifest-driven and deterministic: sample order per
epoch comes from a generator seeded with (seed, epoch), model init from
torch.manual_seed(seed), and all data preparation is pure. Checkpoints
are selected by best validation AUC with ties going to the earliest
epoch.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from . import dataio, losses, maskgen, residual
from .dataio import DataError, ManifestRecord
from .locfuse import FusionWeights, binarize, fuse_maps
from .maskgen import ThresholdConfig
from .metrics import (
    EvalReport,
    average_precision,
    confusion_rates,
    eer,
    iinc,
    iou,
    pbca,
    per_class_recall,
    pr_curve,
    roc_auc,
    roc_curve,
)
from .net import ModelConfig, TwoStreamModel, build_model, fake_score
from .net import save_checkpoint as save_model_checkpoint
from .resample import bilinear_resize, resize_plane


class NumericsError(Exception):
    """Raised when training produces a non-finite loss."""


@dataclass
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 16
    epochs_step1: int = 10
    epochs_step2: int = 10
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 1.0
    sigma: float | None = None  # None = pick by manifest quality (5 hq / 10 lq)
    real_replication_factor: int = 4
    noise_reduction: str = "mean"
    num_classes: int = 2
    head_channels: int = 64
    aggregation: bool = False
    backbone: str = "reference"
    input_size: int = 64
    hidden_units: int = 128

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.real_replication_factor < 1:
            raise ValueError("real_replication_factor must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.noise_reduction not in ("mean", "sum"):
            raise ValueError(f"unknown noise_reduction {self.noise_reduction!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            num_classes=self.num_classes,
            head_channels=self.head_channels,
            aggregation=self.aggregation,
            backbone=self.backbone,
            input_size=self.input_size,
            hidden_units=self.hidden_units,
        )


@dataclass
class Checkpoint:
    epoch: int
    val_auc: float
    state_dict: dict


def select_checkpoint(checkpoints: list[Checkpoint]) -> Checkpoint:
    """Best validation AUC; ties resolve to the earliest epoch."""
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    best = checkpoints[0]
    for ck in checkpoints[1:]:
        if ck.val_auc > best.val_auc:
            best = ck
    return best


def build_epoch(records, cfg: TrainConfig, epoch: int) -> np.ndarray:
    """Shuffled index sequence with each real sample replicated cfg.real_replication_factor times."""
    indices: list[int] = []
    for i, rec in enumerate(records):
        reps = cfg.real_replication_factor if rec.label == "real" else 1
        indices.extend([i] * reps)
    order = np.asarray(indices, dtype=np.int64)
    rng = np.random.default_rng([cfg.seed, epoch])
    rng.shuffle(order)
    return order


class PreparedDataset:
    """Manifest records decoded into training tensors, all precomputed.

    Per sample: normalized image, soft mask targets and noise targets at
    the three prediction scales, class/binary labels, and the full-
    resolution ground-truth mask for localization scoring.
    """

    def __init__(
        self,
        records: list[ManifestRecord],
        cfg: TrainConfig,
        strides: tuple[int, int, int] = (4, 8, 16),
    ) -> None:
        if not records:
            raise DataError("empty dataset")
        self.records = records
        self.cfg = cfg
        size = cfg.input_size
        if size % strides[-1]:
            raise DataError(f"input_size {size} not divisible by deepest stride {strides[-1]}")
        self.scale_sizes = [(size // s, size // s) for s in strides]

        images, gt_masks, class_labels = [], [], []
        mask_targets = [[] for _ in strides]
        noise_targets = [[] for _ in strides]
        for rec in records:
            img, mask = self._load_pair(rec, size)
            sigma = cfg.sigma if cfg.sigma is not None else residual.default_sigma(rec.quality)
            res = residual.extract_residual(img, sigma).residual / 255.0
            images.append(np.transpose(img / 127.5 - 1.0, (2, 0, 1)))
            gt_masks.append(mask)
            class_labels.append(rec.class_index)
            for j, (h, w) in enumerate(self.scale_sizes):
                mask_targets[j].append(maskgen.align_mask(mask, h, w))
                noise_targets[j].append(
                    np.stack([resize_plane(res[:, :, c], h, w) for c in range(3)], axis=0)
                )

        self.images = torch.tensor(np.stack(images), dtype=torch.float32)
        self.mask_targets = [
            torch.tensor(np.stack(t), dtype=torch.float32) for t in mask_targets
        ]
        self.noise_targets = [
            torch.tensor(np.stack(t), dtype=torch.float32) for t in noise_targets
        ]
        self.class_labels = torch.tensor(class_labels, dtype=torch.long)
        self.binary_labels = (self.class_labels > 0).long()
        self.gt_masks = gt_masks

    @staticmethod
    def _load_pair(rec: ManifestRecord, size: int) -> tuple[np.ndarray, np.ndarray]:
        img = dataio.load_image(rec.image_path)
        if img.shape[:2] != (size, size):
            img = np.stack(
                [bilinear_resize(img[:, :, c], size, size) for c in range(3)], axis=2
            )
        if rec.mask_path is not None:
            mask = dataio.load_mask(rec.mask_path)
            if mask.shape != (size, size):
                mask = binarize(maskgen.align_mask(mask, size, size), 0.5)
        elif rec.pair_path is not None:
            pair = dataio.load_image(rec.pair_path)
            if pair.shape[:2] != (size, size):
                pair = np.stack(
                    [bilinear_resize(pair[:, :, c], size, size) for c in range(3)], axis=2
                )
            mask = maskgen.pair_to_mask(pair, img, ThresholdConfig())
        else:
            mask = np.zeros((size, size), dtype=np.float64)
        return img, mask

    def __len__(self) -> int:
        return len(self.records)

    def batch(self, idx: np.ndarray):
        t = torch.as_tensor(idx, dtype=torch.long)
        return (
            self.images[t],
            [m[t] for m in self.mask_targets],
            [n[t] for n in self.noise_targets],
            self.class_labels[t],
            self.binary_labels[t],
        )


def _classification_inputs(logits: torch.Tensor, class_labels, binary_labels, num_classes: int):
    if num_classes == 2:
        return fake_score(logits), binary_labels
    return torch.softmax(logits, dim=-1), class_labels


def _batch_losses(
    model: TwoStreamModel,
    ds: PreparedDataset,
    idx: np.ndarray,
    cfg: TrainConfig,
    with_noise: bool,
) -> losses.LossBundle:
    """Forward one batch and compose the weighted loss.

    A term with zero weight is computed outside the autograd graph: it
    still gets logged, but contributes no gradient at all, so parameters
    reached only through it are left untouched by the optimizer.
    """
    x, mask_t, noise_t, class_labels, binary_labels = ds.batch(idx)
    seg_maps, noise_maps, logits = model(x)
    probs, labels = _classification_inputs(logits, class_labels, binary_labels, cfg.num_classes)
    l_c = losses.classification_loss(probs, labels)
    if cfg.lambda2 > 0:
        l_b = losses.mask_loss(seg_maps, mask_t)
    else:
        with torch.no_grad():
            l_b = losses.mask_loss(seg_maps, mask_t)
    lambda1 = cfg.lambda1 if with_noise else 0.0
    if with_noise and cfg.lambda1 > 0:
        l_n = losses.noise_loss(noise_maps, noise_t, reduction=cfg.noise_reduction)
    elif with_noise:
        with torch.no_grad():
            l_n = losses.noise_loss(noise_maps, noise_t, reduction=cfg.noise_reduction)
    else:
        l_n = torch.zeros((), dtype=l_c.dtype)
    return losses.total_loss(l_c, l_n, l_b, lambda1, cfg.lambda2)


def _snapshot(model: TwoStreamModel) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def validation_auc(model: TwoStreamModel, ds: PreparedDataset, batch_size: int = 64) -> float:
    scores, labels = predict_scores(model, ds, batch_size)
    if not np.isfinite(scores).all():
        raise NumericsError("non-finite validation scores; training diverged")
    return roc_auc(scores, labels)


def predict_scores(
    model: TwoStreamModel, ds: PreparedDataset, batch_size: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(ds), batch_size):
            idx = np.arange(start, min(start + batch_size, len(ds)))
            x = ds.images[torch.as_tensor(idx)]
            _, _, logits = model(x)
            out.append(fake_score(logits).numpy())
    return np.concatenate(out), ds.binary_labels.numpy()


def _run_epochs(
    model: TwoStreamModel,
    train_ds: PreparedDataset,
    val_ds: PreparedDataset,
    cfg: TrainConfig,
    *,
    epochs: int,
    with_noise: bool,
    epoch_offset: int,
    step_offset: int,
    log_fh=None,
) -> tuple[list[Checkpoint], int]:
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(
        params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay
    )
    checkpoints: list[Checkpoint] = []
    step = step_offset
    for epoch in range(epochs):
        model.train()
        order = build_epoch(train_ds.records, cfg, epoch_offset + epoch)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            bundle = _batch_losses(model, train_ds, idx, cfg, with_noise)
            if not torch.isfinite(bundle.total):
                raise NumericsError(f"non-finite loss at step {step}")
            optimizer.zero_grad()
            bundle.total.backward()
            optimizer.step()
            if log_fh is not None:
                dataio.append_jsonl(log_fh, {"step": step, **bundle.floats()})
            step += 1
        val_auc = validation_auc(model, val_ds)
        checkpoints.append(
            Checkpoint(epoch=epoch_offset + epoch, val_auc=val_auc, state_dict=_snapshot(model))
        )
        if log_fh is not None:
            dataio.append_jsonl(
                log_fh, {"epoch": epoch_offset + epoch, "val_auc": val_auc}
            )
            log_fh.flush()
    return checkpoints, step


def train_step1(
    model: TwoStreamModel,
    train_ds: PreparedDataset,
    val_ds: PreparedDataset,
    cfg: TrainConfig,
    log_fh=None,
) -> list[Checkpoint]:
    """Optimize backbone, semantic heads, and classifier; noise heads stay frozen."""
    for p in model.noise_parameters():
        p.requires_grad_(False)
    try:
        checkpoints, _ = _run_epochs(
            model,
            train_ds,
            val_ds,
            cfg,
            epochs=cfg.epochs_step1,
            with_noise=False,
            epoch_offset=0,
            step_offset=0,
            log_fh=log_fh,
        )
    finally:
        for p in model.noise_parameters():
            p.requires_grad_(True)
    return checkpoints


def train_step2(
    model: TwoStreamModel,
    train_ds: PreparedDataset,
    val_ds: PreparedDataset,
    cfg: TrainConfig,
    log_fh=None,
    step_offset: int = 0,
) -> list[Checkpoint]:
    """End-to-end optimization of all parameters with the full weighted loss."""
    for p in model.parameters():
        p.requires_grad_(True)
    checkpoints, _ = _run_epochs(
        model,
        train_ds,
        val_ds,
        cfg,
        epochs=cfg.epochs_step2,
        with_noise=True,
        epoch_offset=cfg.epochs_step1,
        step_offset=step_offset,
        log_fh=log_fh,
    )
    return checkpoints


def run_training(
    manifest_path: str | Path,
    cfg: TrainConfig,
    out_dir: str | Path,
    step: str = "all",
    init_checkpoint: str | Path | None = None,
) -> Path:
    """Train per the configured protocol and return the final checkpoint path.

    step "1" trains the first stage only; step "2" requires a first-stage
    checkpoint (step1_best.pt in out_dir, or an explicit init path); "all"
    chains both in one process.
    """
    if step not in ("1", "2", "all"):
        raise ValueError(f"step must be '1', '2', or 'all', got {step!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = dataio.load_manifest(manifest_path)
    train_records = [r for r in records if r.split == "train"]
    val_records = [r for r in records if r.split == "val"]
    if not train_records:
        raise DataError("manifest has no training samples")
    if not val_records:
        raise DataError("manifest has no validation samples")

    train_ds = PreparedDataset(train_records, cfg)
    val_ds = PreparedDataset(val_records, cfg)

    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model_config())

    log_path = out / "train_log.jsonl"
    final_path = out / ("step1_best.pt" if step == "1" else "step2_best.pt")
    with log_path.open("w", encoding="utf-8") as log_fh:
        if step in ("1", "all"):
            checkpoints = train_step1(model, train_ds, val_ds, cfg, log_fh)
            best1 = select_checkpoint(checkpoints)
            model.load_state_dict(best1.state_dict)
            save_model_checkpoint(
                out / "step1_best.pt", model, best1.epoch, best1.val_auc,
                extra={"train_config": cfg.to_dict(), "step": 1},
            )
        if step == "2":
            source = Path(init_checkpoint) if init_checkpoint else out / "step1_best.pt"
            if not source.exists():
                raise DataError(f"step 2 requires a step-1 checkpoint; not found: {source}")
            from .net import load_checkpoint

            prev, _ = load_checkpoint(source)
            model.load_state_dict(prev.state_dict())
        if step in ("2", "all"):
            step_offset = 0 if step == "2" else cfg.epochs_step1 * _steps_per_epoch(train_ds, cfg)
            checkpoints = train_step2(model, train_ds, val_ds, cfg, log_fh, step_offset)
            best2 = select_checkpoint(checkpoints)
            model.load_state_dict(best2.state_dict)
            save_model_checkpoint(
                out / "step2_best.pt", model, best2.epoch, best2.val_auc,
                extra={"train_config": cfg.to_dict(), "step": 2},
            )
    return final_path


def _steps_per_epoch(ds: PreparedDataset, cfg: TrainConfig) -> int:
    n = sum(cfg.real_replication_factor if r.label == "real" else 1 for r in ds.records)
    return (n + cfg.batch_size - 1) // cfg.batch_size


def evaluate(
    model: TwoStreamModel,
    ds: PreparedDataset,
    batch_size: int = 64,
    fusion: FusionWeights = FusionWeights(),
    loc_threshold: float = 0.5,
) -> tuple[EvalReport, dict]:
    """Detection metrics over all samples; localization over fake samples.

    Returns the report plus raw arrays (scores, curves, per-class recall
    in five-class mode) for export.
    """
    model.eval()
    size = ds.cfg.input_size
    scores, seg_all = [], [[], [], []]
    pred_classes = []
    with torch.no_grad():
        for start in range(0, len(ds), batch_size):
            idx = np.arange(start, min(start + batch_size, len(ds)))
            x = ds.images[torch.as_tensor(idx)]
            seg_maps, _, logits = model(x)
            scores.append(fake_score(logits).numpy())
            pred_classes.append(logits.argmax(dim=-1).numpy())
            for j in range(3):
                seg_all[j].append(seg_maps[j][:, 0].numpy())
    scores = np.concatenate(scores)
    pred_classes = np.concatenate(pred_classes)
    seg_all = [np.concatenate(s) for s in seg_all]
    labels = ds.binary_labels.numpy()

    auc_val = roc_auc(scores, labels)
    acc, fpr, fnr = confusion_rates(scores, labels)
    report = EvalReport(
        acc=acc,
        auc=auc_val,
        eer=eer(scores, labels),
        ap=average_precision(scores, labels),
        fpr=fpr,
        fnr=fnr,
        n_samples=len(ds),
    )

    ious, pbcas, iincs = [], [], []
    for i, rec in enumerate(ds.records):
        if not rec.is_fake:
            continue
        fused = fuse_maps([seg_all[j][i] for j in range(3)], size, size, fusion)
        pred_mask = binarize(fused, loc_threshold)
        gt = ds.gt_masks[i]
        ious.append(iou(pred_mask, gt))
        pbcas.append(pbca(pred_mask, gt))
        iincs.append(iinc(pred_mask, gt))
    if ious:
        report.iou = float(np.mean(ious))
        report.pbca = float(np.mean(pbcas))
        report.iinc = float(np.mean(iincs))

    extras: dict = {
        "scores": scores,
        "labels": labels,
        "roc": roc_curve(scores, labels),
        "pr": pr_curve(scores, labels),
    }
    if ds.cfg.num_classes == 5:
        recalls, avg = per_class_recall(pred_classes, ds.class_labels.numpy(), num_classes=5)
        extras["per_class_recall"] = recalls
        extras["per_class_recall_avg"] = avg
    return report, extras
