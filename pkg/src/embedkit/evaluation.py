"""Exact retrieval, ranked-retrieval metrics, Spearman correlation, and the
per-language embedding-distribution report used to track cross-lingual drift."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class RetrievalRun:
    """Per-query ranked (doc_id, score) lists plus binary relevance judgments."""

    rankings: dict[str, list[tuple[str, float]]]
    judgments: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self):
        for qid, ranked in self.rankings.items():
            for (a, sa), (b, sb) in zip(ranked, ranked[1:]):
                if sb > sa or (sb == sa and b < a):
                    raise ValueError(f"ranking for query {qid!r} violates (score desc, id asc) order")


def exact_search(query_vecs: np.ndarray, query_ids: Sequence[str],
                 corpus_vecs: np.ndarray, corpus_ids: Sequence[str], k: int) -> RetrievalRun:
    """Top-k by cosine over the whole corpus; ties break by ascending doc id."""
    q = np.asarray(query_vecs, dtype=np.float64)
    c = np.asarray(corpus_vecs, dtype=np.float64)
    for name, v in (("query", q), ("corpus", c)):
        norms = np.linalg.norm(v, axis=-1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError(f"{name} embeddings must be L2-normalized")
    k = min(k, c.shape[0])
    scores = q @ c.T
    order_ids = np.array(corpus_ids)
    rankings = {}
    for qi, qid in enumerate(query_ids):
        row = scores[qi]
        # lexsort keys: last key is primary
        order = np.lexsort((order_ids, -row))[:k]
        rankings[qid] = [(str(order_ids[j]), float(row[j])) for j in order]
    return RetrievalRun(rankings=rankings)


def _queries_with_judgments(run: RetrievalRun) -> list[str]:
    import logging
    usable = []
    for qid in run.rankings:
        if run.judgments.get(qid):
            usable.append(qid)
        else:
            logging.getLogger(__name__).warning("query %r has no relevance judgments; excluded", qid)
    if not usable:
        raise ValueError("no query has relevance judgments")
    return usable


def recall_at_k(run: RetrievalRun, k: int) -> float:
    """Mean over queries of |relevant among top-k| / |relevant|."""
    vals = []
    for qid in _queries_with_judgments(run):
        rel = run.judgments[qid]
        top = {doc for doc, _ in run.rankings[qid][:k]}
        vals.append(len(rel & top) / len(rel))
    return float(np.mean(vals))


def ndcg_at_10(run: RetrievalRun) -> float:
    """Binary-gain nDCG over the top 10 ranks."""
    vals = []
    for qid in _queries_with_judgments(run):
        rel = run.judgments[qid]
        dcg = sum(1.0 / math.log2(rank + 1)
                  for rank, (doc, _) in enumerate(run.rankings[qid][:10], start=1)
                  if doc in rel)
        ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(rel), 10) + 1))
        vals.append(dcg / ideal)
    return float(np.mean(vals))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0   # average rank, 1-based
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks; nan when either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError(f"need two equal-length vectors of >= 2 scores, got {x.shape} / {y.shape}")
    rx, ry = _average_ranks(x), _average_ranks(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        return math.nan
    return float(dx @ dy / denom)


@dataclass
class DistributionReport:
    languages: tuple[str, ...]
    centroids: dict[str, np.ndarray]
    pairwise_distances: dict[tuple[str, str], float]
    mean_centroid_distance: float
    projection: np.ndarray            # (n_points, 2) PCA coordinates
    projection_tags: list[str]


def _pca_2d(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / max(1, points.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    comps = eigvecs[:, np.argsort(eigvals)[::-1][:2]]
    # deterministic sign: largest-|entry| coordinate made positive
    for c in range(comps.shape[1]):
        lead = np.argmax(np.abs(comps[:, c]))
        if comps[lead, c] < 0:
            comps[:, c] = -comps[:, c]
    return centered @ comps


def centroid_analysis(embeddings: np.ndarray, tags: Sequence[str]) -> DistributionReport:
    """Per-language centroids of unit-norm embeddings plus a 2-D PCA projection."""
    x = np.asarray(embeddings, dtype=np.float64)
    tags = [str(t) for t in tags]
    if x.ndim != 2 or len(tags) != x.shape[0]:
        raise ValueError("embeddings must be (n, d) with one language tag per row")
    langs = tuple(sorted(set(tags)))
    if len(langs) < 2:
        raise ValueError("centroid analysis needs at least two languages")
    counts = {lg: tags.count(lg) for lg in langs}
    thin = [lg for lg, c in counts.items() if c < 2]
    if thin:
        raise ValueError(f"need at least 2 embeddings per language; too few for {thin}")
    centroids = {lg: x[[i for i, t in enumerate(tags) if t == lg]].mean(axis=0) for lg in langs}
    dists = {}
    for i, a in enumerate(langs):
        for b in langs[i + 1:]:
            dists[(a, b)] = float(np.linalg.norm(centroids[a] - centroids[b]))
    return DistributionReport(
        languages=langs,
        centroids=centroids,
        pairwise_distances=dists,
        mean_centroid_distance=float(np.mean(list(dists.values()))),
        projection=_pca_2d(x),
        projection_tags=tags,
    )


def metric_records(values: dict[str, float], split: str) -> list[dict]:
    """Line-delimited record payloads: one {metric, split, value} per metric."""
    return [{"metric": k, "split": split, "value": v} for k, v in sorted(values.items())]


def projection_table(report: DistributionReport) -> str:
    """Plain numeric table (x, y, tag per line) of the 2-D projection for plotting."""
    lines = ["x\ty\tlanguage"]
    for (x, y), tag in zip(report.projection, report.projection_tags):
        lines.append(f"{float(x)!r}\t{float(y)!r}\t{tag}")
    return "\n".join(lines) + "\n"
