"""AUC and logloss.

AUC uses the tie-aware rank formulation (average ranks, ties credit one
half), which equals brute-force positive/negative pair counting exactly.
Logloss is binary cross-entropy; probability inputs are clamped to
[1e-7, 1 - 1e-7], logit inputs go through the overflow-safe softplus form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ctrbench.errors import MetricUndefinedError, NumericError

PROB_CLAMP = 1e-7


@dataclass
class EvalResult:
    auc: float
    logloss: float
    sample_count: int


def _tied_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative,
    ties counted as half. Raises if only one class is present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise NumericError(f"auc: shape mismatch {scores.shape} vs {labels.shape}")
    if not np.all(np.isfinite(scores)):
        raise NumericError("auc: non-finite scores")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(
            f"auc undefined: {n_pos} positives, {n_neg} negatives")
    ranks = _tied_ranks(scores)
    pos_rank_sum = ranks[pos].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_pair_count(scores, labels) -> float:
    """O(n^2) oracle: count wins plus half-credit ties over all
    positive/negative pairs. Kept independent of the rank path."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos_scores = scores[labels == 1]
    neg_scores = scores[labels == 0]
    if len(pos_scores) == 0 or len(neg_scores) == 0:
        raise MetricUndefinedError("auc undefined on single-class input")
    diff = pos_scores[:, None] - neg_scores[None, :]
    numer = (diff > 0).sum() + 0.5 * (diff == 0).sum()
    return numer / (len(pos_scores) * len(neg_scores))


def logloss(scores_or_probs, labels, input_is_logit: bool = False) -> float:
    """Mean binary cross-entropy. In probability mode the inputs are
    clamped; in logit mode the softplus identity
    -[y ln s(z) + (1-y) ln(1-s(z))] = softplus(z) - y*z is used."""
    x = np.asarray(scores_or_probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) == 0:
        raise NumericError(f"logloss: bad shapes {x.shape} vs {y.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("logloss: non-finite inputs")
    if input_is_logit:
        per_sample = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))) - y * x
    else:
        p = np.clip(x, PROB_CLAMP, 1.0 - PROB_CLAMP)
        per_sample = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(per_sample.mean())


def evaluate(logits, labels) -> EvalResult:
    """Both metrics at once from raw logits."""
    logits = np.asarray(logits, dtype=np.float64)
    return EvalResult(
        auc=auc(logits, np.asarray(labels)),
        logloss=logloss(logits, labels, input_is_logit=True),
        sample_count=len(logits),
    )
