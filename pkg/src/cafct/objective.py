"""BCE-Dice training loss and binary segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .numerics import functional as F
from .numerics.tensor import Tensor, as_tensor, make_result

DICE_SMOOTH = 1.0
METRIC_NAMES = ("iou", "dice", "accuracy", "precision", "sensitivity", "specificity")


def _check_binary(arr: np.ndarray, what: str) -> None:
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{what} must be binary (0/1)")


def _check_pair(logits: Tensor, target: np.ndarray) -> None:
    if logits.shape != target.shape:
        raise ValueError(f"logits shape {logits.shape} != target shape {target.shape}")
    _check_binary(target, "target")


def bce_loss(logits: Tensor, target: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean binary cross-entropy on logits, log-sum-exp stable.

    Per pixel: max(z, 0) - z t + log(1 + exp(-|z|)).
    """
    logits = as_tensor(logits)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=float)
    _check_pair(logits, t)
    z = logits.data
    per_pixel = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    count = z.size

    def grad_fn(g):
        return (g * (F._sigmoid(z) - t) / count,)

    return make_result(np.asarray(per_pixel.mean()), (logits,), grad_fn, "bce")


def dice_loss(logits: Tensor, target: Union[Tensor, np.ndarray], smooth: float = DICE_SMOOTH) -> Tensor:
    """1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s), pooled over the whole batch."""
    logits = as_tensor(logits)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=float)
    _check_pair(logits, t)
    p = F.sigmoid(logits)
    inter = (p * t).sum()
    denom = p.sum() + (float(t.sum()) + smooth)
    return 1.0 - (inter * 2.0 + smooth) / denom


def dice_loss_from_probs(p: np.ndarray, t: np.ndarray, smooth: float = DICE_SMOOTH) -> float:
    """Dice loss evaluated directly on probabilities (hard 0/1 allowed)."""
    return float(1.0 - (2.0 * (p * t).sum() + smooth) / (p.sum() + t.sum() + smooth))


def bce_dice_loss(
    logits: Tensor,
    target: Union[Tensor, np.ndarray],
    w_bce: float = 1.0,
    w_dice: float = 1.0,
) -> Tensor:
    if w_bce < 0 or w_dice < 0:
        raise ValueError("loss weights must be non-negative")
    if w_bce == 0 and w_dice == 0:
        raise ValueError("at least one loss weight must be positive")
    if w_dice == 0:
        return bce_loss(logits, target) * w_bce
    if w_bce == 0:
        return dice_loss(logits, target) * w_dice
    return bce_loss(logits, target) * w_bce + dice_loss(logits, target) * w_dice


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


def confusion_counts(pred_mask, target) -> ConfusionCounts:
    pred = np.asarray(pred_mask.data if isinstance(pred_mask, Tensor) else pred_mask)
    true = np.asarray(target.data if isinstance(target, Tensor) else target)
    if pred.shape != true.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {true.shape}")
    _check_binary(pred, "prediction")
    _check_binary(true, "target")
    p = pred.astype(bool)
    t = true.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def threshold_logits(logits, threshold: float = 0.5) -> np.ndarray:
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (F._sigmoid(z) > threshold).astype(np.float64)


def _ratio(num: int, den: int, other_errors: int = 0) -> float:
    # empty denominator: perfect only if the complementary error set is also empty
    if den == 0:
        return 1.0 if other_errors == 0 else 0.0
    return num / den


@dataclass
class MetricsReport:
    counts: ConfusionCounts
    iou: float
    dice: float
    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    aggregation: str = "global"

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_text(self, prefix: str = "") -> str:
        """One ``metric=value`` line per field, six decimals for the fractions."""
        lines = [f"{prefix}aggregation={self.aggregation}"]
        for name in ("tp", "fp", "fn", "tn"):
            lines.append(f"{prefix}{name}={getattr(self.counts, name)}")
        for name in METRIC_NAMES:
            lines.append(f"{prefix}{name}={getattr(self, name):.6f}")
        return "\n".join(lines)


def metrics_from_counts(c: ConfusionCounts, aggregation: str = "global") -> MetricsReport:
    if c.total <= 0:
        raise ValueError("confusion counts are empty")
    return MetricsReport(
        counts=c,
        iou=_ratio(c.tp, c.tp + c.fn + c.fp),
        dice=_ratio(2 * c.tp, (c.tp + c.fn) + (c.tp + c.fp)),
        accuracy=(c.tp + c.tn) / c.total,
        precision=_ratio(c.tp, c.tp + c.fp, c.fn),
        sensitivity=_ratio(c.tp, c.tp + c.fn, c.fp),
        specificity=_ratio(c.tn, c.tn + c.fp, c.fn),
        aggregation=aggregation,
    )


def aggregate_metrics(per_image: Sequence[ConfusionCounts], mode: str = "per_image_mean") -> MetricsReport:
    if not per_image:
        raise ValueError("cannot aggregate an empty list of counts")
    total = per_image[0]
    for c in per_image[1:]:
        total = total + c
    if mode == "global":
        return metrics_from_counts(total, "global")
    if mode != "per_image_mean":
        raise ValueError(f"unknown aggregation mode {mode!r}")
    reports = [metrics_from_counts(c) for c in per_image]
    means = {name: float(np.mean([getattr(r, name) for r in reports])) for name in METRIC_NAMES}
    return MetricsReport(counts=total, aggregation="per_image_mean", **means)
