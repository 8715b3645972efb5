"""Diagnosis and segmentation metrics: ACC, SPE, SEN, AUC and Dice."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeMismatchError, SingleClassError


@dataclass
class MetricsReport:
    acc: float
    spe: float
    sen: float
    auc: float
    threshold: float
    n: int
    tp: int
    tn: int
    fp: int
    fn: int
    dice: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _binary_labels(labels) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return labels.astype(np.int64)


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    start = 0
    n = len(values)
    while start < n:
        stop = start + 1
        while stop < n and sorted_vals[stop] == sorted_vals[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop + 1) / 2.0
        start = stop
    return ranks


def auc(probs, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count one half)."""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    labels = _binary_labels(labels)
    if probs.shape != labels.shape:
        raise ShapeMismatchError(f"{probs.shape[0]} scores for {labels.shape[0]} labels")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs at least one positive and one negative sample")
    ranks = average_ranks(probs)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_counts(probs, labels, threshold: float = 0.5) -> tuple[int, int, int, int]:
    """``(tp, tn, fp, fn)`` with a sample predicted positive when ``prob >= threshold``."""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    labels = _binary_labels(labels)
    pred = probs >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    tn = int(np.sum(~pred & ~pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return tp, tn, fp, fn


def compute_metrics(probs, labels, threshold: float = 0.5) -> MetricsReport:
    tp, tn, fp, fn = confusion_counts(probs, labels, threshold)
    if tp + fn == 0 or tn + fp == 0:
        raise SingleClassError("sensitivity and specificity need both classes present")
    n = tp + tn + fp + fn
    return MetricsReport(
        acc=(tp + tn) / n,
        spe=tn / (tn + fp),
        sen=tp / (tp + fn),
        auc=auc(probs, labels),
        threshold=threshold,
        n=n,
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
    )


def dice_score(pred_mask, gt_mask) -> float:
    """``2|P & G| / (|P| + |G|)``; two empty masks score 1.

    Non-boolean predictions are binarized at 0.5.
    """
    pred = np.asarray(pred_mask)
    gt = np.asarray(gt_mask)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    pred = pred >= 0.5 if pred.dtype != bool else pred
    gt = gt >= 0.5 if gt.dtype != bool else gt
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.sum(pred & gt)) / total
