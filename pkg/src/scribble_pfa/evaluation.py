"""Confusion matrices, IoU / mIoU, pixel accuracy and the full-vs-weak gap."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import UNLABELED, ClassSet, LabelMap
from .errors import EmptyEvaluation, GridMismatch


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are ground truth classes, columns predicted classes.

    The extra last column counts pixels predicted UNLABELED; they hit no
    class and therefore count as false negatives of their ground truth class.
    """

    counts: np.ndarray
    ignored: int = 0

    @classmethod
    def empty(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes + 1), dtype=np.int64), 0)

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[1] != c.shape[0] + 1:
            raise ValueError(f"counts must be C x (C+1), got {c.shape}")
        if (c < 0).any() or self.ignored < 0:
            raise ValueError("counts must be nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.ignored + other.ignored)

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.ignored == other.ignored and np.array_equal(self.counts, other.counts)

    __hash__ = None


def accumulate_confusion(pred: LabelMap, gt: LabelMap, acc: Optional[ConfusionMatrix] = None) -> ConfusionMatrix:
    if pred.labels.shape != gt.labels.shape:
        raise GridMismatch(f"prediction {pred.labels.shape} vs ground truth {gt.labels.shape}")
    C = gt.classes.num_classes
    if acc is None:
        acc = ConfusionMatrix.empty(C)
    elif acc.num_classes != C:
        raise ValueError("accumulator class count differs from the ground truth's")
    g = gt.labels.ravel().astype(np.int64)
    p = pred.labels.ravel().astype(np.int64)
    keep = g != UNLABELED
    g, p = g[keep], p[keep]
    p = np.where(p == UNLABELED, C, p)
    if (p > C).any():
        raise ValueError("prediction contains labels outside the class set")
    counts = np.bincount(g * (C + 1) + p, minlength=C * (C + 1)).reshape(C, C + 1)
    return ConfusionMatrix(acc.counts + counts, acc.ignored + int((~keep).sum()))


@dataclass(frozen=True)
class EvalReport:
    per_class_iou: list  # percent, None where the class is absent from gt and prediction
    miou: float
    pixel_accuracy: float
    confusion: ConfusionMatrix = field(compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "per_class_iou": self.per_class_iou,
            "miou": self.miou,
            "pixel_accuracy": self.pixel_accuracy,
            "confusion": {
                "counts": self.confusion.counts.tolist(),
                "ignored": self.confusion.ignored,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_csv(self, path, classes: Optional[ClassSet] = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class_id", "name", "iou"])
            for c, iou in enumerate(self.per_class_iou):
                name = classes.names[c] if classes is not None and classes.names else ""
                writer.writerow([c, name, "" if iou is None else f"{iou:.4f}"])


def miou(conf: ConfusionMatrix) -> EvalReport:
    total = conf.total
    if total == 0:
        raise EmptyEvaluation("no evaluated pixels")
    C = conf.num_classes
    counts = conf.counts.astype(np.float64)
    tp = np.diag(counts[:, :C])
    fn = counts.sum(axis=1) - tp
    fp = counts[:, :C].sum(axis=0) - tp
    denom = tp + fp + fn
    ious = [None if d == 0 else float(100.0 * t / d) for t, d in zip(tp, denom)]
    defined = [v for v in ious if v is not None]
    return EvalReport(
        per_class_iou=ious,
        miou=float(np.mean(defined)),
        pixel_accuracy=float(100.0 * tp.sum() / total),
        confusion=conf,
    )


def evaluate_pairs(pairs: Iterable[tuple[LabelMap, LabelMap]], num_classes: int) -> EvalReport:
    """Dataset-level report from (prediction, ground truth) pairs."""
    acc = ConfusionMatrix.empty(num_classes)
    for pred, gt in pairs:
        acc = accumulate_confusion(pred, gt, acc)
    return miou(acc)


@dataclass(frozen=True)
class GapReport:
    miou_full: float
    miou_weak_baseline: float
    miou_strategy: float
    full_gap: float
    remaining_gap: float
    reduction_pct: Optional[float]  # None when the full gap is zero

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def gap_report(miou_full: float, miou_weak: float, miou_strategy: float) -> GapReport:
    """Gap = full - weak; reduction = (full gap - remaining gap) / full gap in percent."""
    for name, v in (("miou_full", miou_full), ("miou_weak", miou_weak), ("miou_strategy", miou_strategy)):
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"{name} must lie in [0, 100], got {v}")
    full_gap = miou_full - miou_weak
    remaining = miou_full - miou_strategy
    reduction = None if full_gap == 0 else 100.0 * (full_gap - remaining) / full_gap
    return GapReport(miou_full, miou_weak, miou_strategy, full_gap, remaining, reduction)
