"""Clustering evaluation: accuracy under optimal label matching, normalized
mutual information, adjusted Rand index, and macro F1, all built on a shared
contingency table."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ShapeError


@dataclass
class ContingencyTable:
    """counts[i, j] = number of items with predicted label i and true label j."""

    counts: np.ndarray
    pred_values: np.ndarray
    truth_values: np.ndarray

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_labels(cls, pred, truth) -> "ContingencyTable":
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape or pred.ndim != 1:
            raise ShapeError(f"label vectors must match, got {pred.shape} and {truth.shape}")
        if len(pred) == 0:
            raise ShapeError("label vectors are empty")
        pv, pi = np.unique(pred, return_inverse=True)
        tv, ti = np.unique(truth, return_inverse=True)
        counts = np.zeros((len(pv), len(tv)), dtype=np.int64)
        np.add.at(counts, (pi, ti), 1)
        return cls(counts, pv, tv)


def _optimal_matching(table: ContingencyTable):
    """Row/col index pairs of the agreement-maximizing label bijection."""
    return linear_sum_assignment(-table.counts)


def accuracy(pred, truth) -> float:
    """Fraction of items matched under the best bijection of cluster labels."""
    table = ContingencyTable.from_labels(pred, truth)
    rows, cols = _optimal_matching(table)
    return float(table.counts[rows, cols].sum() / table.total)


def nmi(pred, truth) -> float:
    """2 * MI / (H(pred) + H(truth)); 1.0 when both partitions are trivial,
    0.0 when exactly one is."""
    table = ContingencyTable.from_labels(pred, truth)
    n = table.total
    pij = table.counts / n
    pi = table.row_sums / n
    pj = table.col_sums / n
    h_pred = float(-(pi * np.log(pi)).sum())
    h_truth = float(-(pj * np.log(pj)).sum())
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    if h_pred == 0.0 or h_truth == 0.0:
        return 0.0
    mask = pij > 0
    mi = float((pij[mask] * np.log(pij[mask] / np.outer(pi, pj)[mask])).sum())
    return float(np.clip(2.0 * mi / (h_pred + h_truth), 0.0, 1.0))


def _comb2(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return x * (x - 1.0) / 2.0


def ari(pred, truth) -> float:
    """Adjusted Rand index over contingency-table pair counts."""
    table = ContingencyTable.from_labels(pred, truth)
    n = table.total
    if n < 2:
        raise ShapeError("ari needs at least two items")
    sum_ij = _comb2(table.counts).sum()
    sum_a = _comb2(table.row_sums).sum()
    sum_b = _comb2(table.col_sums).sum()
    expected = sum_a * sum_b / _comb2(np.array([n]))[0]
    denom = 0.5 * (sum_a + sum_b) - expected
    if denom == 0.0:
        # both partitions trivial (all singletons or one cluster on both sides)
        return 1.0 if sum_a == sum_b else 0.0
    return float((sum_ij - expected) / denom)


def f1(pred, truth, pairwise: bool = False) -> float:
    """Macro F1 over ground-truth classes after the optimal label bijection.

    With pairwise=True, computes precision/recall over co-clustered item
    pairs instead (no matching involved).
    """
    table = ContingencyTable.from_labels(pred, truth)
    if pairwise:
        tp = _comb2(table.counts).sum()
        pp = _comb2(table.row_sums).sum()
        ap = _comb2(table.col_sums).sum()
        if pp + ap == 0.0:
            return 1.0  # both partitions all-singletons agree perfectly
        return float(2.0 * tp / (pp + ap))
    rows, cols = _optimal_matching(table)
    scores = []
    matched_cols = dict(zip(cols, rows))
    for j in range(table.counts.shape[1]):
        if j not in matched_cols:
            scores.append(0.0)  # no predicted cluster was assigned to this class
            continue
        i = matched_cols[j]
        tp = table.counts[i, j]
        predicted = table.row_sums[i]
        actual = table.col_sums[j]
        precision = tp / predicted if predicted else 0.0
        recall = tp / actual
        if precision + recall == 0.0:
            scores.append(0.0)
        else:
            scores.append(2.0 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def evaluate_all(pred, truth, pairwise_f1: bool = False) -> dict[str, float]:
    return {
        "acc": accuracy(pred, truth),
        "nmi": nmi(pred, truth),
        "ari": ari(pred, truth),
        "f1": f1(pred, truth, pairwise=pairwise_f1),
    }
