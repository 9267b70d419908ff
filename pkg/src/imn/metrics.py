"""Classification metrics from confusion counts plus rank-based AUROC."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float
    mcc: float
    auroc: Optional[float]
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def count(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def auroc(labels, scores) -> Optional[float]:
    """Mann-Whitney AUROC via average ranks; ties get 0.5 credit.

    Returns None when only one class is present.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def compute_metrics(labels, scores, threshold: float = 0.5) -> MetricsReport:
    """Confusion metrics at a threshold plus threshold-free AUROC.

    Degenerate denominators resolve to 0 (precision, recall, F1, MCC);
    balanced accuracy averages only the class rates that are defined.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels and scores must be equal-length non-empty vectors")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    preds = scores >= threshold
    tp = int(np.sum((labels == 1) & preds))
    fp = int(np.sum((labels == 0) & preds))
    tn = int(np.sum((labels == 0) & ~preds))
    fn = int(np.sum((labels == 1) & ~preds))
    n = tp + fp + tn + fn

    accuracy = (tp + tn) / n
    tpr = tp / (tp + fn) if tp + fn else None
    tnr = tn / (tn + fp) if tn + fp else None
    rates = [r for r in (tpr, tnr) if r is not None]
    balanced = sum(rates) / len(rates)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tpr if tpr is not None else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    denom = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    mcc = ((tp * tn - fp * fn) / denom) if denom else 0.0

    return MetricsReport(
        accuracy=accuracy, balanced_accuracy=balanced, precision=precision,
        recall=recall, f1=f1, mcc=mcc, auroc=auroc(labels, scores),
        tp=tp, fp=fp, tn=tn, fn=fn, threshold=threshold,
    )
