"""Post-hoc evaluation of a completed stream.

Two clustering-accuracy protocols are implemented, and their exact
definitions matter for any absolute number quoted from this package:

* strict: a one-to-one assignment between predicted categories and true
  classes, chosen by a min-cost matching that maximizes the total number of
  correctly matched items.  Each true class is claimed by at most one
  predicted category and vice versa; items of unmatched categories count as
  wrong.
* greedy: many-to-one - every predicted category is mapped to its majority
  true class (ties broken toward the smaller class label).

Old/new accuracies are computed on the item subsets whose ground truth is an
old/new class, after the global mapping has been fixed; they are never
remapped per subset.  By construction greedy acc_all >= strict acc_all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class StreamResult:
    """Per-item ground truth and predicted category index for one stream.

    ``k_known`` is the number of known-class prototypes the stream started
    with (prediction indices below it mean "assigned to a known class").
    When present, the estimated category count is k_known plus the number of
    distinct spawned indices; otherwise it falls back to the number of
    distinct predicted indices.
    """

    true_labels: np.ndarray
    predictions: np.ndarray
    old_labels: frozenset
    k_known: int | None = None

    def __post_init__(self):
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.predictions = np.asarray(self.predictions, dtype=np.int64)
        if self.true_labels.shape != self.predictions.shape:
            raise ValueError("true_labels and predictions must have equal length")
        if self.true_labels.size == 0:
            raise ValueError("stream is empty")
        self.old_labels = frozenset(int(v) for v in self.old_labels)

    @property
    def n_true_classes(self) -> int:
        return int(np.unique(self.true_labels).size)

    def old_mask(self) -> np.ndarray:
        return np.isin(self.true_labels, sorted(self.old_labels))


@dataclass
class EvalReport:
    acc_all_strict: float
    acc_old_strict: float
    acc_new_strict: float
    acc_all_greedy: float
    acc_old_greedy: float
    acc_new_greedy: float
    num_predicted_categories: int
    num_true_classes: int
    category_count_error: int
    assignment: list[list[int]]  # [predicted index, true label] pairs (strict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        return EvalReport(**json.loads(text))


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Min-cost one-to-one assignment over injections from the smaller side.

    Backed by scipy's solver, which handles rectangular matrices directly.
    Returns (row_indices, col_indices, total_cost).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        raise ValueError("cost matrix is empty")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    return rows, cols, float(cost[rows, cols].sum())


def _contingency(result: StreamResult) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    preds = np.unique(result.predictions)
    trues = np.unique(result.true_labels)
    table = np.zeros((preds.size, trues.size), dtype=np.int64)
    pred_pos = {int(p): i for i, p in enumerate(preds)}
    true_pos = {int(t): j for j, t in enumerate(trues)}
    for p, t in zip(result.predictions, result.true_labels):
        table[pred_pos[int(p)], true_pos[int(t)]] += 1
    return table, preds, trues


def _split_accuracies(result: StreamResult, correct: np.ndarray) -> tuple[float, float, float]:
    old = result.old_mask()
    acc_all = float(correct.mean())
    acc_old = float(correct[old].mean()) if old.any() else 0.0
    acc_new = float(correct[~old].mean()) if (~old).any() else 0.0
    return acc_all, acc_old, acc_new


def strict_assignment(result: StreamResult) -> dict[int, int]:
    """One-to-one map predicted index -> true label maximizing matched items."""
    table, preds, trues = _contingency(result)
    rows, cols, _ = hungarian(-table.astype(np.float64))
    return {int(preds[r]): int(trues[c]) for r, c in zip(rows, cols)}


def strict_acc(result: StreamResult) -> tuple[float, float, float]:
    """(all, old, new) accuracy under the one-to-one protocol."""
    mapping = strict_assignment(result)
    mapped = np.array([mapping.get(int(p), -1) for p in result.predictions])
    return _split_accuracies(result, mapped == result.true_labels)


def greedy_assignment(result: StreamResult) -> dict[int, int]:
    """Majority true class per predicted category; ties to the smaller label."""
    table, preds, trues = _contingency(result)
    # np.argmax picks the first maximum; trues is sorted ascending
    return {int(p): int(trues[np.argmax(table[i])]) for i, p in enumerate(preds)}


def greedy_acc(result: StreamResult) -> tuple[float, float, float]:
    """(all, old, new) accuracy under the majority-mapping protocol."""
    mapping = greedy_assignment(result)
    mapped = np.array([mapping[int(p)] for p in result.predictions])
    return _split_accuracies(result, mapped == result.true_labels)


def count_error(result: StreamResult) -> tuple[int, int]:
    """(estimated category count, absolute error against the true count)."""
    if result.k_known is not None:
        spawned = np.unique(result.predictions[result.predictions >= result.k_known])
        n_cls = result.k_known + int(spawned.size)
    else:
        n_cls = int(np.unique(result.predictions).size)
    return n_cls, abs(n_cls - result.n_true_classes)


def evaluate(result: StreamResult) -> EvalReport:
    s_all, s_old, s_new = strict_acc(result)
    g_all, g_old, g_new = greedy_acc(result)
    n_cls, err = count_error(result)
    mapping = strict_assignment(result)
    return EvalReport(
        acc_all_strict=s_all, acc_old_strict=s_old, acc_new_strict=s_new,
        acc_all_greedy=g_all, acc_old_greedy=g_old, acc_new_greedy=g_new,
        num_predicted_categories=n_cls,
        num_true_classes=result.n_true_classes,
        category_count_error=err,
        assignment=sorted([p, t] for p, t in mapping.items()),
    )
