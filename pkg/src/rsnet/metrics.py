"""Confusion-matrix metrics: per-class IoU, mIoU, mAcc, overall accuracy."""
from __future__ import annotations

import numpy as np

from .errors import ValidationError


class ConfusionMatrix:
    """K x K counts; rows are ground truth, columns are predictions."""

    def __init__(self, num_classes: int, counts=None):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), np.int64) if counts is None else np.asarray(counts, np.int64)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def update(self, truth, pred) -> "ConfusionMatrix":
        return confusion_update(self, truth, pred)


def confusion_update(cm: ConfusionMatrix, truth, pred) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    K = cm.num_classes
    if truth.shape != pred.shape:
        raise ValidationError(f"label vectors differ in length: {truth.size} vs {pred.size}")
    if truth.size and (min(truth.min(), pred.min()) < 0 or max(truth.max(), pred.max()) >= K):
        raise ValidationError(f"label out of range [0, {K})")
    cm.counts += np.bincount(truth * K + pred, minlength=K * K).reshape(K, K)
    return cm


def _counts(cm) -> np.ndarray:
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    if counts.sum() <= 0:
        raise ValidationError("confusion matrix is empty")
    return counts.astype(np.float64)


def per_class_iou(cm) -> np.ndarray:
    """IoU per class; NaN for classes absent from both truth and prediction."""
    c = _counts(cm)
    tp = np.diag(c)
    denom = c.sum(axis=1) + c.sum(axis=0) - tp
    return np.divide(tp, denom, out=np.full_like(tp, np.nan), where=denom > 0)


def per_class_acc(cm) -> np.ndarray:
    c = _counts(cm)
    rows = c.sum(axis=1)
    return np.divide(np.diag(c), rows, out=np.full(len(rows), np.nan), where=rows > 0)


def miou(cm) -> float:
    return float(np.nanmean(per_class_iou(cm)))


def macc(cm) -> float:
    return float(np.nanmean(per_class_acc(cm)))


def overall_acc(cm) -> float:
    c = _counts(cm)
    return float(np.trace(c) / c.sum())


def report(cm: ConfusionMatrix, class_names=None) -> dict[str, float]:
    names = class_names or [f"class{i}" for i in range(cm.num_classes)]
    out = {"miou": miou(cm), "macc": macc(cm), "overall_acc": overall_acc(cm)}
    for name, v in zip(names, per_class_iou(cm)):
        out[f"iou.{name}"] = float(v)
    return out


def format_report(values: dict[str, float]) -> str:
    """One ``key = value`` line per metric, 4 decimals (``nan`` for absent classes)."""
    return "\n".join(f"{k} = {v:.4f}" for k, v in values.items())


def parse_report(text: str) -> dict[str, float]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = float(v)
    return out


def format_table(cm: ConfusionMatrix, class_names=None, label: str = "RSNet") -> str:
    """Per-class IoU table in percent: method, mIOU, mAcc, then one column per class."""
    names = list(class_names or [f"class{i}" for i in range(cm.num_classes)])
    iou = per_class_iou(cm) * 100
    header = ["Method", "mIOU", "mAcc", *names]
    row = [label, f"{miou(cm) * 100:.2f}", f"{macc(cm) * 100:.2f}"]
    row += ["-" if np.isnan(v) else f"{v:.2f}" for v in iou]
    widths = [max(len(h), len(r)) for h, r in zip(header, row)]
    fmt = " | ".join(f"{{:>{w}}}" for w in widths)
    return fmt.format(*header) + "\n" + fmt.format(*row)
