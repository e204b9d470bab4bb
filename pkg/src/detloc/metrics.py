"""Detection and localization metrics.

Detection metrics operate on per-frame fake-probability scores with
labels 0 (real) / 1 (fake). Conventions are fixed for determinism: AUC
gives ties half credit (Mann-Whitney), EER is linearly interpolated
between adjacent ROC operating points, AP breaks score ties by stable
input order, and the decision threshold for ACC/FPR/FNR is 0.5.

Localization metrics compare binary masks. IINC is the symmetric
non-containment mean: 0 on identical masks, 1 on disjoint ones. Its
exact formula is a reimplementation choice (the metric originates in
prior detection work that this package does not vendor); see README.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class EvalReport:
    """Detection metrics plus an optional localization block.

    fpr/fnr are reported at decision threshold 0.5 and may be None when a
    class is absent. Localization fields are None when no ground-truth
    masks were available.
    """

    acc: float
    auc: float
    eer: float
    ap: float
    fpr: float | None
    fnr: float | None
    iou: float | None = None
    pbca: float | None = None
    iinc: float | None = None
    n_samples: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        known = {f: data.get(f) for f in cls.__dataclass_fields__}
        if known.get("n_samples") is None:
            known["n_samples"] = 0
        return cls(**known)


def _as_mask_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    pred_b = pred.astype(bool)
    gt_b = gt.astype(bool)
    for name, raw, b in (("pred", pred, pred_b), ("gt", gt, gt_b)):
        if not np.array_equal(raw.astype(np.float64), b.astype(np.float64)):
            raise ValueError(f"{name} mask is not binary")
    return pred_b, gt_b


def iou(pred, gt) -> float:
    """Intersection over union; both masks empty counts as 1.0."""
    pred_b, gt_b = _as_mask_pair(pred, gt)
    union = int(np.count_nonzero(pred_b | gt_b))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(pred_b & gt_b))
    return inter / union


def pbca(pred, gt) -> float:
    """Pixel-wise binary classification accuracy of a predicted mask."""
    pred_b, gt_b = _as_mask_pair(pred, gt)
    return int(np.count_nonzero(pred_b == gt_b)) / pred_b.size


def iinc(pred, gt) -> float:
    """Symmetric non-containment: mean of (1 - |I|/|pred|) and (1 - |I|/|gt|)."""
    pred_b, gt_b = _as_mask_pair(pred, gt)
    n_pred = int(np.count_nonzero(pred_b))
    n_gt = int(np.count_nonzero(gt_b))
    if n_pred == 0 and n_gt == 0:
        return 0.0
    if n_pred == 0 or n_gt == 0:
        return 1.0
    inter = int(np.count_nonzero(pred_b & gt_b))
    return 0.5 * ((1.0 - inter / n_pred) + (1.0 - inter / n_gt))


def _scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.shape != scores.shape:
        raise ValueError("scores and labels must be 1-D and the same length")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def _require_both_classes(labels: np.ndarray) -> None:
    if labels.min() == labels.max():
        raise ValueError("single-class input: need at least one real and one fake sample")


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(fake scores above real) with half credit for ties."""
    scores, labels = _scores_labels(scores, labels)
    _require_both_classes(labels)
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Operating points (thresholds, fpr, tpr) sweeping the threshold downward.

    The first point is (inf, 0, 0); a sample is called fake when its
    score >= threshold.
    """
    scores, labels = _scores_labels(scores, labels)
    _require_both_classes(labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    thresholds = [np.inf]
    fpr = [0.0]
    tpr = [0.0]
    tp = fp = 0
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int(sorted_labels[i : j + 1].sum())
        fp += (j - i + 1) - int(sorted_labels[i : j + 1].sum())
        thresholds.append(sorted_scores[i])
        fpr.append(fp / n_neg)
        tpr.append(tp / n_pos)
        i = j + 1
    return np.asarray(thresholds), np.asarray(fpr), np.asarray(tpr)


def eer(scores, labels) -> float:
    """Rate at which FPR equals FNR, interpolated along the ROC polyline."""
    _, fpr, tpr = roc_curve(scores, labels)
    fnr = 1.0 - tpr
    diff = fpr - fnr
    for k in range(len(fpr)):
        if diff[k] == 0.0:
            return float(fpr[k])
        if k + 1 < len(fpr) and diff[k] < 0.0 <= diff[k + 1]:
            dfpr = fpr[k + 1] - fpr[k]
            dfnr = fnr[k + 1] - fnr[k]
            t = (fnr[k] - fpr[k]) / (dfpr - dfnr)
            return float(fpr[k] + t * dfpr)
    return float(fpr[-1])


def average_precision(scores, labels) -> float:
    """Step-interpolated area under the precision/recall curve.

    Samples are ranked by descending score; equal scores keep their input
    order.
    """
    scores, labels = _scores_labels(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive sample")
    order = np.argsort(-scores, kind="stable")
    tp = 0
    ap = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx] == 1:
            tp += 1
            ap += tp / rank
    return ap / n_pos


def confusion_rates(
    scores, labels, threshold: float = 0.5
) -> tuple[float, float | None, float | None]:
    """(accuracy, fpr, fnr) at the decision threshold; rate is None if its class is absent."""
    scores, labels = _scores_labels(scores, labels)
    pred = (scores >= threshold).astype(np.int64)
    acc = float(np.count_nonzero(pred == labels)) / labels.size
    n_neg = int(np.count_nonzero(labels == 0))
    n_pos = int(np.count_nonzero(labels == 1))
    fpr = float(np.count_nonzero((pred == 1) & (labels == 0))) / n_neg if n_neg else None
    fnr = float(np.count_nonzero((pred == 0) & (labels == 1))) / n_pos if n_pos else None
    return acc, fpr, fnr


def per_class_recall(
    pred_labels, gt_labels, num_classes: int = 5
) -> tuple[list[float | None], float]:
    """Recall per class plus the unweighted average over classes present in gt."""
    pred = np.asarray(pred_labels, dtype=np.int64)
    gt = np.asarray(gt_labels, dtype=np.int64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ValueError("prediction and ground-truth label arrays must match")
    recalls: list[float | None] = []
    for k in range(num_classes):
        total = int(np.count_nonzero(gt == k))
        if total == 0:
            recalls.append(None)
            continue
        correct = int(np.count_nonzero((gt == k) & (pred == k)))
        recalls.append(correct / total)
    present = [r for r in recalls if r is not None]
    if not present:
        raise ValueError("no class present in ground truth")
    return recalls, float(sum(present) / len(present))


def pr_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(recall, precision) points in ranking order, for CSV export."""
    scores, labels = _scores_labels(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("precision/recall curve needs at least one positive sample")
    order = np.argsort(-scores, kind="stable")
    tp = 0
    recall = []
    precision = []
    for rank, idx in enumerate(order, start=1):
        tp += int(labels[idx] == 1)
        recall.append(tp / n_pos)
        precision.append(tp / rank)
    return np.asarray(recall), np.asarray(precision)
