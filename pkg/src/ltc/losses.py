"""Training objectives, as pure functions returning value + output gradients.

Four pieces: a supervised contrastive loss over unit features, plain
cross-entropy over logits, a dual hinge loss that pushes known-sample
prototype scores above tau + m_pos and pseudo-unknown scores below
tau - m_neg, and the weighted total that combines them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LossConfig:
    temperature: float = 0.07
    alpha: float = 0.3
    gamma_mm: float = 0.05
    margin_pos: float = 0.05
    margin_neg: float = 0.05

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if min(self.alpha, self.gamma_mm, self.margin_pos, self.margin_neg) < 0:
            raise ValueError("loss weights and margins must be >= 0")


def sup_con_loss(
    features: np.ndarray, labels: np.ndarray, temperature: float
) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss over a batch of unit features.

    For each anchor i, positives are every other same-label view in the
    batch; the denominator runs over all views except the anchor itself.
    Per-anchor losses are averaged over positives, then over anchors.
    Returns (loss, gradient at the features).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = features.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs at least 2 views")
    pos_mask = (labels[:, None] == labels[None, :]) & ~np.eye(n, dtype=bool)
    pos_counts = pos_mask.sum(axis=1)
    if np.any(pos_counts == 0):
        bad = int(np.argmin(pos_counts))
        raise ValueError(
            f"anchor {bad} has no positives; augmented views should make this impossible"
        )

    sims = features @ features.T / temperature
    np.fill_diagonal(sims, -np.inf)  # anchor excluded from its own denominator
    row_max = sims.max(axis=1)
    exp = np.exp(sims - row_max[:, None])
    np.fill_diagonal(exp, 0.0)
    denom = exp.sum(axis=1)
    log_prob = sims - (row_max + np.log(denom))[:, None]

    pos_log_prob = np.where(pos_mask, log_prob, 0.0)  # diagonal is -inf, mask first
    loss = float(-pos_log_prob.sum(axis=1) @ (1.0 / pos_counts) / n)

    # d loss / d sims, then chain through sims = F F^T / T
    softmax = exp / denom[:, None]
    grad_sims = (softmax - pos_mask / pos_counts[:, None]) / n
    grad_features = (grad_sims @ features + grad_sims.T @ features) / temperature
    return loss, grad_features


def ce_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy; gradient is (softmax - one_hot) / batch size."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    grad = np.exp(shifted - log_z[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def max_margin_loss(
    known_scores: np.ndarray,
    pseudo_scores: np.ndarray,
    tau: float,
    margin_pos: float,
    margin_neg: float,
) -> tuple[float, float, float, np.ndarray, np.ndarray]:
    """Dual hinge around the novelty threshold.

    Known samples are penalized when their top prototype score falls below
    tau + margin_pos; pseudo-unknowns when theirs rises above tau - margin_neg.
    An empty pseudo batch contributes zero (generation is stochastic).
    Returns (l_pos, l_neg, l_mm, grad_known, grad_pseudo); the hinge
    subgradient at the kink is taken as 0.
    """
    known_scores = np.asarray(known_scores, dtype=np.float64)
    pseudo_scores = np.asarray(pseudo_scores, dtype=np.float64)
    if known_scores.size == 0:
        raise ValueError("known score set is empty")

    pos_slack = (tau + margin_pos) - known_scores
    pos_active = pos_slack > 0
    l_pos = float(np.mean(np.where(pos_active, pos_slack, 0.0)))
    grad_known = np.where(pos_active, -1.0 / known_scores.size, 0.0)

    if pseudo_scores.size == 0:
        l_neg = 0.0
        grad_pseudo = np.zeros(0)
    else:
        neg_slack = pseudo_scores - (tau - margin_neg)
        neg_active = neg_slack > 0
        l_neg = float(np.mean(np.where(neg_active, neg_slack, 0.0)))
        grad_pseudo = np.where(neg_active, 1.0 / pseudo_scores.size, 0.0)

    return l_pos, l_neg, l_pos + l_neg, grad_known, grad_pseudo


def total_loss(ce: float, sup: float, mm: float, alpha: float, gamma_mm: float) -> float:
    """Weighted sum of the three components; gamma_mm = 0 recovers the plain
    classification + contrastive objective."""
    return ce + alpha * sup + gamma_mm * mm
