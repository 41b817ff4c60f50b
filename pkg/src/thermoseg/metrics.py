"""Confusion statistics, per-class overlap metrics and the multi-class Dice loss."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import DEFAULT_CLASS_NAMES, LabelMask

EPS = 1e-7


@dataclass(frozen=True)
class ConfusionStats:
    """Per-class pixel tallies. Each field is an int64 array of length C."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.tp)

    @property
    def total(self) -> int:
        return int(self.tp[0] + self.fp[0] + self.fn[0] + self.tn[0]) if len(self.tp) else 0

    def __add__(self, other: "ConfusionStats") -> "ConfusionStats":
        if self.num_classes != other.num_classes:
            raise ValueError("cannot merge confusion stats with different class counts")
        return ConfusionStats(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    def absent(self) -> np.ndarray:
        """True for classes missing from both prediction and ground truth."""
        return (self.tp + self.fp + self.fn) == 0

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionStats":
        z = np.zeros(num_classes, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy())


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """Dense (gt, pred) count matrix."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    for name, a in (("pred", pred), ("gt", gt)):
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            raise ValueError(f"{name} label out of range [0, {num_classes})")
    idx = gt.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )


def confusion(
    pred: LabelMask | np.ndarray, gt: LabelMask | np.ndarray, num_classes: int | None = None
) -> ConfusionStats:
    p = pred.labels if isinstance(pred, LabelMask) else np.asarray(pred)
    g = gt.labels if isinstance(gt, LabelMask) else np.asarray(gt)
    if num_classes is None:
        num_classes = gt.num_classes if isinstance(gt, LabelMask) else len(DEFAULT_CLASS_NAMES)
    m = confusion_matrix(p, g, num_classes)
    tp = np.diag(m).copy()
    fp = m.sum(axis=0) - tp
    fn = m.sum(axis=1) - tp
    tn = m.sum() - tp - fp - fn
    return ConfusionStats(tp, fp, fn, tn)


def iou(stats: ConfusionStats, c: int, eps: float = EPS) -> float:
    tp, fp, fn = int(stats.tp[c]), int(stats.fp[c]), int(stats.fn[c])
    return tp / (tp + fp + fn + eps)


def dice(stats: ConfusionStats, c: int, eps: float = EPS) -> float:
    tp, fp, fn = int(stats.tp[c]), int(stats.fp[c]), int(stats.fn[c])
    return 2 * tp / (2 * tp + fp + fn + eps)


def pixel_accuracy(stats: ConfusionStats, c: int, eps: float = EPS) -> float:
    tp, fp, fn, tn = (int(a[c]) for a in (stats.tp, stats.fp, stats.fn, stats.tn))
    return (tp + tn) / (tp + fp + fn + tn + eps)


@dataclass(frozen=True)
class MetricsReport:
    class_names: tuple[str, ...]
    iou: tuple[float, ...]
    dice: tuple[float, ...]
    pixel_accuracy: tuple[float, ...]
    absent: tuple[bool, ...]

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.iou))

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.dice))

    @property
    def mean_pixel_accuracy(self) -> float:
        return float(np.mean(self.pixel_accuracy))

    def to_dict(self) -> dict:
        return {
            "classes": [
                {
                    "class": name,
                    "iou": self.iou[i],
                    "dice": self.dice[i],
                    "pixel_accuracy": self.pixel_accuracy[i],
                    "absent": self.absent[i],
                }
                for i, name in enumerate(self.class_names)
            ],
            "mean_iou": self.mean_iou,
            "mean_dice": self.mean_dice,
            "mean_pixel_accuracy": self.mean_pixel_accuracy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        """One row per class plus a ``mean`` row, values to 3 decimals."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "iou", "dice", "pixel_accuracy", "absent"])
        for i, name in enumerate(self.class_names):
            w.writerow(
                [
                    name,
                    f"{self.iou[i]:.3f}",
                    f"{self.dice[i]:.3f}",
                    f"{self.pixel_accuracy[i]:.3f}",
                    int(self.absent[i]),
                ]
            )
        w.writerow(
            [
                "mean",
                f"{self.mean_iou:.3f}",
                f"{self.mean_dice:.3f}",
                f"{self.mean_pixel_accuracy:.3f}",
                "",
            ]
        )
        return buf.getvalue()


def aggregate(
    iou_values: Sequence[float],
    dice_values: Sequence[float],
    pa_values: Sequence[float],
    class_names: Sequence[str] = DEFAULT_CLASS_NAMES,
    absent: Sequence[bool] | None = None,
) -> MetricsReport:
    """Bundle per-class values into a report; means are unweighted over all classes."""
    n = len(class_names)
    absent = (False,) * n if absent is None else absent
    for name, vals in (
        ("iou", iou_values),
        ("dice", dice_values),
        ("pixel_accuracy", pa_values),
        ("absent", absent),
    ):
        if len(vals) != n:
            raise ValueError(f"{name}: expected {n} values, got {len(vals)}")
    return MetricsReport(
        tuple(class_names),
        tuple(float(v) for v in iou_values),
        tuple(float(v) for v in dice_values),
        tuple(float(v) for v in pa_values),
        tuple(bool(v) for v in absent),
    )


def report(
    stats: ConfusionStats, class_names: Sequence[str] = DEFAULT_CLASS_NAMES, eps: float = EPS
) -> MetricsReport:
    cs = range(stats.num_classes)
    return aggregate(
        [iou(stats, c, eps) for c in cs],
        [dice(stats, c, eps) for c in cs],
        [pixel_accuracy(stats, c, eps) for c in cs],
        class_names,
        stats.absent().tolist(),
    )


# ---------------------------------------------------------------------------
# Dice loss on (H, W, C) logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels[..., None] == np.arange(num_classes)).astype(np.float64)


def _dice_terms(logits, gt):
    logits = np.asarray(logits, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if logits.shape != g.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs gt {g.shape}")
    p = softmax(logits)
    axes = tuple(range(p.ndim - 1))
    num = 2.0 * (p * g).sum(axis=axes) + EPS
    den = (p * p).sum(axis=axes) + (g * g).sum(axis=axes) + EPS
    return p, g, num, den


def dice_loss(logits: np.ndarray, gt: np.ndarray) -> float:
    """``1 - mean_c (2 sum p*g + eps) / (sum p^2 + sum g^2 + eps)`` with p = softmax(logits).

    ``gt`` is one-hot with the same shape as ``logits``; the class axis is last.
    """
    _, _, num, den = _dice_terms(logits, gt)
    return float(1.0 - np.mean(num / den))


def dice_loss_grad(logits: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`dice_loss` with respect to the logits."""
    p, g, num, den = _dice_terms(logits, gt)
    n_classes = p.shape[-1]
    # dL/dp, then back through the per-pixel softmax Jacobian
    dp = -(2.0 * g / den - 2.0 * p * num / den**2) / n_classes
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))
