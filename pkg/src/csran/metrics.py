"""Evaluation metrics: accuracy, binary F1, MAP/MRR and Recall@K.

Ranking metrics take an iterable of groups, each a ``(scores, relevance)``
pair of equal-length sequences. Candidates are ranked by descending score;
equal scores keep their original order.

Every value is computed as an exact rational and rounded once, so results
are the correctly rounded floats of the textbook definitions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise DataError(f"{preds.shape[0] if preds.ndim else 0} predictions for {labels.size} labels")
    if labels.size == 0:
        raise DataError("accuracy of an empty set is undefined")
    return int(np.sum(preds == labels)) / labels.size


def f1_binary(preds, labels, positive_class=1) -> float:
    """Harmonic mean of precision and recall; 0.0 when both are zero."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    tp = int(np.sum((preds == positive_class) & (labels == positive_class)))
    fp = int(np.sum((preds == positive_class) & (labels != positive_class)))
    fn = int(np.sum((preds != positive_class) & (labels == positive_class)))
    if tp == 0:
        return 0.0
    # 2PR / (P + R) simplifies to 2TP / (2TP + FP + FN)
    return 2 * tp / (2 * tp + fp + fn)


def _ranked_relevance(scores, relevance):
    scores, relevance = np.asarray(scores, dtype=float), np.asarray(relevance)
    if scores.shape != relevance.shape or scores.size == 0:
        raise DataError("a group needs matching, non-empty score and relevance lists")
    order = np.argsort(-scores, kind="stable")
    return relevance[order] > 0


def _exact_ap(scores, relevance):
    hits = np.flatnonzero(_ranked_relevance(scores, relevance))
    if hits.size == 0:
        return None
    return sum(Fraction(n + 1, int(r) + 1) for n, r in enumerate(hits)) / hits.size


def _exact_rr(scores, relevance):
    hits = np.flatnonzero(_ranked_relevance(scores, relevance))
    return None if hits.size == 0 else Fraction(1, int(hits[0]) + 1)


def average_precision(scores, relevance):
    """AP of one group, or None when it has no relevant candidate."""
    ap = _exact_ap(scores, relevance)
    return None if ap is None else float(ap)


def reciprocal_rank(scores, relevance):
    rr = _exact_rr(scores, relevance)
    return None if rr is None else float(rr)


def map_mrr(groups):
    """Mean average precision and mean reciprocal rank.

    Groups without any relevant candidate are dropped (and logged).
    """
    aps, rrs, dropped = [], [], 0
    for scores, relevance in groups:
        ap = _exact_ap(scores, relevance)
        if ap is None:
            dropped += 1
            continue
        aps.append(ap)
        rrs.append(_exact_rr(scores, relevance))
    if dropped:
        log.warning("dropped %d groups without a relevant candidate", dropped)
    if not aps:
        raise DataError("no group with a relevant candidate to evaluate")
    return float(sum(aps) / len(aps)), float(sum(rrs) / len(rrs))


def recall_at_k(groups, k_values=(1, 2, 5)) -> dict:
    """Fraction of groups with a relevant candidate inside the top k.

    With several relevant candidates a group counts once any of them is in
    the top k. Groups without one are skipped.
    """
    first, skipped = [], 0
    for scores, relevance in groups:
        hits = np.flatnonzero(_ranked_relevance(scores, relevance))
        if hits.size == 0:
            skipped += 1
            continue
        first.append(hits[0] + 1)
    if skipped:
        log.warning("skipped %d groups without a positive candidate", skipped)
    if not first:
        raise DataError("no group with a positive candidate to evaluate")
    first = np.asarray(first)
    return {k: int(np.sum(first <= k)) / first.size for k in k_values}


def group_by(scores, labels, groups):
    """Collect flat per-pair scores into ``(scores, relevance)`` groups.

    Groups appear in order of first occurrence.
    """
    buckets: dict = {}
    for s, y, g in zip(scores, labels, groups):
        bucket = buckets.setdefault(g, ([], []))
        bucket[0].append(float(s))
        bucket[1].append(int(y))
    return list(buckets.values())


@dataclass
class MetricReport:
    task_kind: str
    values: dict
    counts: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"task_kind={self.task_kind}"]
        lines += [f"{k}={v:.6f}" for k, v in self.values.items()]
        lines += [f"{k}={v}" for k, v in self.counts.items()]
        return "\n".join(lines) + "\n"


def report(task_kind, logits, labels, groups=None) -> MetricReport:
    """The metric family each task kind is judged by."""
    z = np.asarray(logits)
    labels = np.asarray(labels)
    preds = np.argmax(z, axis=-1)
    counts = {"examples": int(labels.size)}
    if task_kind in ("nli", "binary"):
        values = {"accuracy": accuracy(preds, labels)}
    elif task_kind == "f1":
        values = {"f1": f1_binary(preds, labels)}
    elif task_kind in ("ranking", "response"):
        shifted = np.exp(z - z.max(axis=-1, keepdims=True))
        score = shifted[:, 1] / shifted.sum(axis=-1)
        grouped = group_by(score, labels, groups)
        counts["groups"] = len(grouped)
        if task_kind == "ranking":
            m, r = map_mrr(grouped)
            values = {"map": m, "mrr": r}
        else:
            values = {f"r@{k}": v for k, v in recall_at_k(grouped, (1, 2, 5)).items()}
            values["accuracy"] = accuracy(preds, labels)
    else:
        raise DataError(f"unknown task kind {task_kind!r}")
    return MetricReport(task_kind, values, counts)


DEFAULT_DEV_METRIC = {"nli": "accuracy", "binary": "accuracy", "f1": "f1", "ranking": "map", "response": "r@1"}
