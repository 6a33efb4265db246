"""Segmentation quality metrics (per-category IoU and their mean)."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Metrics:
    """Per-category IoU (NaN where a category is absent from pred and gt)."""

    iou: np.ndarray
    miou: float

    def defined(self) -> np.ndarray:
        return ~np.isnan(self.iou)


def miou(pred: np.ndarray, gt: np.ndarray, num_categories: int) -> Metrics:
    """Exact confusion-matrix IoU; unlabeled (-1) gt points are excluded.

    Predictions outside [0, C) (e.g. an absent pseudo label) count against
    the ground-truth category but never as a false positive elsewhere.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ValidationError("pred and gt must be 1-D arrays of equal length")
    valid = gt >= 0
    pred = pred[valid]
    gt = gt[valid]
    c = num_categories
    tp = np.zeros(c, dtype=np.int64)
    fp = np.zeros(c, dtype=np.int64)
    fn = np.zeros(c, dtype=np.int64)
    in_range = (pred >= 0) & (pred < c)
    tp += np.bincount(gt[in_range & (pred == gt)], minlength=c)
    fp += np.bincount(pred[in_range & (pred != gt)], minlength=c)
    fn += np.bincount(gt[(~in_range) | (pred != gt)], minlength=c)
    denom = tp + fp + fn
    iou = np.full(c, np.nan)
    defined = denom > 0
    iou[defined] = tp[defined] / denom[defined]
    mean = float(np.nanmean(iou)) if defined.any() else float("nan")
    return Metrics(iou=iou, miou=mean)
