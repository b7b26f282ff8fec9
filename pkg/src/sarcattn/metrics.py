"""Binary classification metrics: thresholded confusion counts, P/R/F1,
accuracy, and threshold-free ROC AUC (Mann-Whitney form)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np


class SingleClassError(ValueError):
    """AUC is undefined when only one class is present."""


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    auc: float | None
    threshold: float
    n: int
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, s: str) -> "MetricsReport":
        return cls(**json.loads(s))

    def summary(self) -> str:
        """Human-readable one-liner, metrics to 4 decimal places."""
        auc = "undefined" if self.auc is None else f"{self.auc:.4f}"
        return (f"n={self.n} P={self.precision:.4f} R={self.recall:.4f} "
                f"F1={self.f1:.4f} acc={self.accuracy:.4f} auc={auc} "
                f"(tp={self.tp} fp={self.fp} tn={self.tn} fn={self.fn}, "
                f"threshold={self.threshold})")


def confusion(scores, labels, threshold: float):
    """(tp, fp, tn, fn); a score exactly at the threshold counts positive."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(
            f"scores and labels must have equal length, got "
            f"{scores.shape} vs {labels.shape}")
    if scores.size == 0:
        raise ValueError("need at least one sample")
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return tp, fp, tn, fn


def prf1(tp: int, fp: int, tn: int, fn: int):
    """(precision, recall, f1, accuracy); any zero denominator yields 0
    for that metric instead of an error."""
    n = tp + fp + tn + fn
    if n == 0:
        raise ValueError("need at least one sample")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return precision, recall, f1, (tp + tn) / n


def auc(scores, labels) -> float:
    """P(random positive scores above random negative), ties counting 1/2;
    computed from average ranks so tied groups are exact."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError(
            "undefined AUC: need at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # ranks are 1-based; tied entries share the average rank
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    rank_sum = float(ranks[np.asarray(labels) == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Full report at the given threshold. Degenerate denominators are
    reported as 0 and noted in `flags`; a single-class input gets
    auc=None plus a flag instead of an error."""
    tp, fp, tn, fn = confusion(scores, labels, threshold)
    precision, recall, f1, accuracy = prf1(tp, fp, tn, fn)
    flags = []
    if tp + fp == 0:
        flags.append("precision_zero_denominator")
    if tp + fn == 0:
        flags.append("recall_zero_denominator")
    if precision + recall == 0:
        flags.append("f1_zero_denominator")
    try:
        auc_value = auc(scores, labels)
    except SingleClassError:
        auc_value = None
        flags.append("auc_undefined_single_class")
    return MetricsReport(
        tp=tp, fp=fp, tn=tn, fn=fn,
        precision=precision, recall=recall, f1=f1, accuracy=accuracy,
        auc=auc_value, threshold=threshold, n=tp + fp + tn + fn, flags=flags)
