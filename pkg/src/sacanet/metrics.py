"""Confusion-matrix segmentation metrics: AF, mIoU and OA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sacanet.errors import InputError
from sacanet.ops import IGNORE_INDEX


@dataclass
class ConfusionMatrix:
    """``counts[gt, pred]`` pixel tallies."""

    counts: np.ndarray

    @classmethod
    def empty(cls, k: int) -> "ConfusionMatrix":
        return cls(np.zeros((k, k), dtype=np.int64))

    @classmethod
    def from_labels(cls, pred, gt, k: int, ignore_index: int = IGNORE_INDEX) -> "ConfusionMatrix":
        cm = cls.empty(k)
        cm.update(pred, gt, ignore_index)
        return cm

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    def update(self, pred, gt, ignore_index: int = IGNORE_INDEX) -> None:
        pred = np.asarray(pred).ravel().astype(np.int64)
        gt = np.asarray(gt).ravel().astype(np.int64)
        if pred.shape != gt.shape:
            raise InputError(f"prediction has {pred.size} pixels, ground truth {gt.size}")
        keep = gt != ignore_index
        pred, gt = pred[keep], gt[keep]
        k = self.k
        if ((gt < 0) | (gt >= k)).any() or ((pred < 0) | (pred >= k)).any():
            raise InputError(f"labels must lie in [0, {k})")
        self.counts += np.bincount(gt * k + pred, minlength=k * k).reshape(k, k)


def metrics(cm: ConfusionMatrix) -> dict:
    """AF, mIoU and OA as fractions, plus per-class IoU/F1 (NaN for classes absent from GT).

    Class means run over classes that occur in the ground truth.
    """
    counts = np.asarray(cm.counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise InputError("no scored pixels")
    tp = np.diag(counts)
    gt_total = counts.sum(axis=1)
    fp = counts.sum(axis=0) - tp
    fn = gt_total - tp
    present = gt_total > 0
    iou = np.full(len(tp), np.nan)
    f1 = np.full(len(tp), np.nan)
    iou[present] = tp[present] / (tp + fp + fn)[present]
    f1[present] = 2 * tp[present] / (2 * tp + fp + fn)[present]
    return {
        "AF": float(f1[present].mean()),
        "mIoU": float(iou[present].mean()),
        "OA": float(tp.sum() / total),
        "iou": iou.tolist(),
        "f1": f1.tolist(),
    }
