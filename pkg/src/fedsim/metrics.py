"""Binary classification metrics and the multi-center aggregation rules.

Global accuracy is the test-size weighted mean of per-center accuracies.
Global AUC is computed on the pooled labels and scores of every center,
which in general differs from the mean of per-center AUCs.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from fedsim.errors import EmptyInputError, UndefinedAUCError


@dataclass(frozen=True)
class ScoredExample:
    center_id: int
    true_label: int
    score: float

    @property
    def predicted(self) -> int:
        # argmax over (1 - p, p) with lowest-index tie-break: p == 0.5 -> class 0
        return int(self.score > 1.0 - self.score)


def predicted_from_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    return (s > 1.0 - s).astype(np.int64)


def accuracy(labels, predicted) -> float:
    labels = np.asarray(labels)
    predicted = np.asarray(predicted)
    if labels.size == 0:
        raise EmptyInputError("accuracy of an empty set")
    return float(np.count_nonzero(labels == predicted)) / labels.size


def auc(labels, scores) -> float:
    """Mann-Whitney AUC via average ranks; tied pos/neg pairs count one half."""
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(np.count_nonzero(labels))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(
            f"AUC undefined with {n_pos} positives and {n_neg} negatives")

    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # average 1-based rank for every run of equal scores
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], sorted_scores.size]
    run_ranks = (starts + ends + 1) / 2.0
    ranks = np.empty(scores.size)
    ranks[order] = np.repeat(run_ranks, ends - starts)

    u = float(np.sum(ranks[labels])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auc_or_none(labels, scores) -> float | None:
    try:
        return auc(labels, scores)
    except UndefinedAUCError:
        return None


def global_weighted_acc(per_center: Sequence[tuple[int, float]]) -> float:
    if len(per_center) == 0:
        raise EmptyInputError("no centers to aggregate")
    total = 0
    acc = 0.0
    for n_k, acc_k in per_center:
        if n_k <= 0:
            raise EmptyInputError("every center needs at least one test example")
        acc += n_k * acc_k
        total += n_k
    return acc / total


def pooled_auc(centers: Sequence[tuple[Sequence[int], Sequence[float]]]) -> float:
    """AUC over the concatenation of every ``(labels, scores)`` pair."""
    if len(centers) == 0:
        raise EmptyInputError("no centers to pool")
    labels = np.concatenate([np.asarray(lab) for lab, _ in centers])
    scores = np.concatenate([np.asarray(sc, dtype=np.float64) for _, sc in centers])
    return auc(labels, scores)


def cv_summary(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; a single value has std 0."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise EmptyInputError("cv_summary of no values")
    mean = float(np.mean(vals))
    if vals.size == 1:
        return mean, 0.0
    return mean, float(np.std(vals, ddof=1))


@dataclass
class CenterResult:
    name: str
    n_test: int
    acc: float
    auc: float | None

    def to_dict(self) -> dict:
        return {"name": self.name, "n_test": self.n_test, "acc": self.acc, "auc": self.auc}


@dataclass
class EvalReport:
    per_center: list[CenterResult]
    global_acc: float
    global_auc: float | None
    fold_id: int | None = None
    round: int | None = None

    def to_dict(self) -> dict:
        return {
            "fold": self.fold_id,
            "round": self.round,
            "centers": [c.to_dict() for c in self.per_center],
            "global": {"acc": self.global_acc, "auc": self.global_auc},
        }


def build_report(
    names: Sequence[str],
    labels: Sequence[np.ndarray],
    scores: Sequence[np.ndarray] | None,
    predicted: Sequence[np.ndarray] | None = None,
    fold_id: int | None = None,
    round: int | None = None,
) -> EvalReport:
    """Per-center ACC/AUC plus the weighted global ACC and pooled global AUC.

    Centers with no test examples are skipped; single-class centers get an
    undefined (``None``) AUC but still contribute to the pooled AUC. With
    ``scores=None`` (multi-class models) every AUC is undefined.
    """
    if predicted is None:
        if scores is None:
            raise EmptyInputError("need scores or predictions")
        predicted = [predicted_from_scores(s) for s in scores]
    rows = []
    pooled = []
    for i, (name, lab, pred) in enumerate(zip(names, labels, predicted)):
        lab = np.asarray(lab)
        if lab.size == 0:
            continue
        c_auc = None
        if scores is not None:
            c_auc = auc_or_none(lab, scores[i])
            pooled.append((lab, scores[i]))
        rows.append(CenterResult(name, int(lab.size), accuracy(lab, pred), c_auc))
    if not rows:
        raise EmptyInputError("no test examples in any center")
    g_acc = global_weighted_acc([(r.n_test, r.acc) for r in rows])
    g_auc = None
    if pooled:
        try:
            g_auc = pooled_auc(pooled)
        except UndefinedAUCError:
            pass
    return EvalReport(rows, g_acc, g_auc, fold_id=fold_id, round=round)

