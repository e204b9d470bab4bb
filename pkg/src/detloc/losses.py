"""Supervision terms: classification CE, multi-scale mask BCE, noise L1.

All functions take torch tensors and are differentiable; the weighted
total is L_c + lambda1 * L_n + lambda2 * L_b.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

EPS = 1e-7


@dataclass
class LossBundle:
    """Scalar loss terms, their weights, and the weighted total."""

    l_c: torch.Tensor
    l_n: torch.Tensor
    l_b: torch.Tensor
    lambda1: float
    lambda2: float
    total: torch.Tensor

    def floats(self) -> dict[str, float]:
        return {
            "L_c": float(self.l_c.detach()),
            "L_n": float(self.l_n.detach()),
            "L_b": float(self.l_b.detach()),
            "total": float(self.total.detach()),
        }


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(EPS, 1.0 - EPS)


def classification_loss(pred_probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy.

    1-D input is the per-sample fake probability with binary labels; 2-D
    input is a (N, K) probability matrix with integer class labels.
    """
    if pred_probs.ndim == 1:
        p = _clamp(pred_probs)
        y = labels.to(p.dtype)
        return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()
    if pred_probs.ndim == 2:
        p = _clamp(pred_probs)
        picked = p[torch.arange(p.shape[0]), labels.long()]
        return -torch.log(picked).mean()
    raise ValueError(f"expected 1-D or 2-D probabilities, got shape {tuple(pred_probs.shape)}")


def _per_scale_pair(pred: torch.Tensor, gt: torch.Tensor, channels: int) -> tuple[torch.Tensor, torch.Tensor]:
    if pred.ndim == 3 and channels == 1:
        pred = pred.unsqueeze(1)
    if gt.ndim == 3 and channels == 1:
        gt = gt.unsqueeze(1)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if pred.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) maps, got shape {tuple(pred.shape)}")
    return pred, gt


def mask_loss(pred_maps, gt_maps) -> torch.Tensor:
    """Multi-scale BCE: per-scale pixel mean, summed over scales, averaged over the batch."""
    if len(pred_maps) != len(gt_maps) or not pred_maps:
        raise ValueError("prediction and target scale counts differ or are empty")
    total = None
    for pred, gt in zip(pred_maps, gt_maps):
        pred, gt = _per_scale_pair(pred, gt, channels=1)
        p = _clamp(pred)
        bce = -(gt * torch.log(p) + (1.0 - gt) * torch.log(1.0 - p))
        per_sample = bce.flatten(1).mean(dim=1)
        total = per_sample if total is None else total + per_sample
    return total.mean()


def noise_loss(pred_noise, gt_noise, reduction: str = "mean") -> torch.Tensor:
    """Multi-scale L1 between predicted and target residuals.

    reduction "mean" averages |diff| over the elements of each scale
    (resolution-independent weighting); "sum" is the literal per-pixel
    sum. Either way scales are summed and the batch is averaged.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    if len(pred_noise) != len(gt_noise) or not pred_noise:
        raise ValueError("prediction and target scale counts differ or are empty")
    total = None
    for pred, gt in zip(pred_noise, gt_noise):
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
        diff = (pred - gt).abs().flatten(1)
        per_sample = diff.mean(dim=1) if reduction == "mean" else diff.sum(dim=1)
        total = per_sample if total is None else total + per_sample
    return total.mean()


def total_loss(
    l_c: torch.Tensor,
    l_n: torch.Tensor,
    l_b: torch.Tensor,
    lambda1: float,
    lambda2: float,
) -> LossBundle:
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be non-negative")
    total = l_c + lambda1 * l_n + lambda2 * l_b
    return LossBundle(l_c=l_c, l_n=l_n, l_b=l_b, lambda1=lambda1, lambda2=lambda2, total=total)
