"""Pixel accuracy and intersection-over-union scoring."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["EvalRecord", "score", "aggregate"]


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    acc: float
    iou: float
    tp: int
    fp: int
    fn: int
    tn: int


def score(pred: np.ndarray, gt: np.ndarray, image_id: str = "") -> EvalRecord:
    """Exact confusion counts of a predicted mask against ground truth.

    ``acc = (tp + tn) / total`` and ``iou = tp / (tp + fp + fn)``; an
    empty-vs-empty pair scores iou 1 by convention.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    acc = (tp + tn) / (tp + tn + fp + fn)
    denom = tp + fp + fn
    iou = tp / denom if denom else 1.0
    return EvalRecord(image_id, acc, iou, tp, fp, fn, tn)


def aggregate(records: Sequence[EvalRecord]) -> tuple[float, float]:
    """Unweighted mean (acc, iou) over images."""
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    return (
        float(np.mean([r.acc for r in records])),
        float(np.mean([r.iou for r in records])),
    )
