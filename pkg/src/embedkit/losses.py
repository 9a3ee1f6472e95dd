"""Training objectives: InfoNCE with in-batch negatives, CoSENT, next-token CE.

InfoNCE treats, for each query i, the set {own positive} + {all other
in-batch positives} + {row-i explicit negatives} as softmax candidates
over cosine/temperature logits; the positive sits inside the denominator,
so the loss is non-negative and is exactly 0 for a single pair with no
negatives.

CoSENT sums exp((cos_low - cos_high) / tau) over every pair of examples
whose ground-truth similarity labels are strictly ordered, inside
log(1 + .); ties contribute nothing, so a batch with all-equal labels
scores exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def _as_tracked(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_normalized(name: str, data: np.ndarray, atol: float = 1e-6):
    norms = np.sqrt((data * data).sum(axis=-1))
    if np.abs(norms - 1.0).max() > atol:
        raise ValueError(f"{name} embeddings must be L2-normalized (worst norm {norms.flat[np.abs(norms - 1.0).argmax()]})")


@dataclass
class ContrastiveBatch:
    """Queries (B, D), positives (B, D), optional explicit negatives (B, K, D)."""

    queries: Tensor
    positives: Tensor
    negatives: Optional[Tensor] = None
    temperature: float = 0.05

    def __post_init__(self):
        self.queries = _as_tracked(self.queries)
        self.positives = _as_tracked(self.positives)
        if self.negatives is not None:
            self.negatives = _as_tracked(self.negatives)
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        q, p = self.queries, self.positives
        if q.ndim != 2 or q.shape[0] < 1:
            raise ValueError(f"queries must be a non-empty (B, D) matrix, got {q.shape}")
        if p.shape != q.shape:
            raise ValueError(f"positives shape {p.shape} does not match queries {q.shape}")
        if self.negatives is not None:
            n = self.negatives
            if n.ndim != 3 or n.shape[0] != q.shape[0] or n.shape[2] != q.shape[1]:
                raise ValueError(f"negatives shape {n.shape} incompatible with queries {q.shape}")
        _check_normalized("query", q.data)
        _check_normalized("positive", p.data)
        if self.negatives is not None:
            _check_normalized("negative", self.negatives.data)


def _logsumexp_lastdim(logits: Tensor) -> Tensor:
    m = np.max(logits.data, axis=-1, keepdims=True)
    shifted = ag.exp(ag.add_const(logits, -m))
    return ag.add_const(ag.log(ag.sum_lastdim(shifted)), m[..., 0])


def nce_from_scores(pos_scores: Tensor, candidate_scores: Tensor, temperature: float = 1.0) -> Tensor:
    """Sum over queries of (logsumexp(candidates/T) - positive/T)."""
    inv_t = 1.0 / temperature
    lse = _logsumexp_lastdim(ag.scale(candidate_scores, inv_t))
    return ag.tensor_sum(ag.sub(lse, ag.scale(pos_scores, inv_t)))


def info_nce(batch: ContrastiveBatch) -> Tensor:
    loss, _, _ = info_nce_with_scores(batch)
    return loss


def info_nce_with_scores(batch: ContrastiveBatch) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """InfoNCE loss plus the (B,) positive and (B, K) negative cosines it used."""
    q, p = batch.queries, batch.positives
    bsz, dim = q.shape
    pos_scores = ag.sum_lastdim(ag.mul(q, p))                      # (B,)
    all_pos = ag.matmul(q, ag.transpose2d(p))                      # (B, B) in-batch candidates
    if batch.negatives is not None and batch.negatives.shape[1] > 0:
        neg = batch.negatives
        neg_scores = ag.reshape(ag.matmul(neg, ag.reshape(q, (bsz, dim, 1))), (bsz, neg.shape[1]))
        candidates = ag.concat_lastdim(all_pos, neg_scores)
        neg_values = neg_scores.data.copy()
    else:
        candidates = all_pos
        neg_values = np.zeros((bsz, 0))
    loss = nce_from_scores(pos_scores, candidates, batch.temperature)
    return loss, pos_scores.data.copy(), neg_values


@dataclass
class StsBatch:
    """Per-pair cosine scores with ordinal ground-truth similarity labels."""

    cosines: Tensor
    labels: np.ndarray
    tau: float = 0.05

    def __post_init__(self):
        self.cosines = _as_tracked(self.cosines)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.cosines.ndim != 1 or self.cosines.shape[0] < 1:
            raise ValueError(f"cosines must be a non-empty vector, got shape {self.cosines.shape}")
        if self.labels.shape != self.cosines.shape:
            raise ValueError(f"labels shape {self.labels.shape} does not match cosines {self.cosines.shape}")
        if np.abs(self.cosines.data).max() > 1.0 + 1e-9:
            raise ValueError("cosines must lie in [-1, 1]")


def cosent(batch: StsBatch) -> Tensor:
    hi, lo = np.where(batch.labels[:, None] > batch.labels[None, :])
    if hi.size == 0:
        return Tensor(0.0)
    diffs = ag.sub(ag.index_select(batch.cosines, 0, lo), ag.index_select(batch.cosines, 0, hi))
    total = ag.tensor_sum(ag.exp(ag.scale(diffs, 1.0 / batch.tau)))
    return ag.log(ag.add_const(total, 1.0))


def next_token_ce(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy of (L, V) logits against shifted-by-one target ids."""
    logits = _as_tracked(logits)
    targets = np.asarray(targets, dtype=np.intp)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (positions, vocab), got {logits.shape}")
    if targets.shape != (logits.shape[0],):
        raise ValueError(f"targets shape {targets.shape} does not match positions {logits.shape[0]}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ValueError(f"target id out of range for vocab {logits.shape[1]}")
    lse = _logsumexp_lastdim(logits)
    picked = ag.gather_lastdim(logits, targets)
    return ag.tensor_mean(ag.sub(lse, picked))
