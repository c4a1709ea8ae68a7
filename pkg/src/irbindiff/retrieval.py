"""Similarity search and evaluation over function embeddings.

Two protocols:

one-to-one   score labeled pairs with cosine similarity and report AUC
             (rank-based, ties counted half).

one-to-many  for each query, rank a pool holding exactly one ground-truth
             match plus distractors that never share the query's source
             identity; report recall@k and mean reciprocal rank. Ranking
             sorts scores descending with ties broken by insertion order.

Pairs are grouped into cross-compiler (XC), cross-optimization (XO) and
cross-architecture (XA) tasks and their combinations: a pair belongs to a
task when its compile settings differ in exactly the task's dimensions.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MetricError
from .ircorpus import FunctionMeta
from .seeding import rng_for

log = logging.getLogger(__name__)

TASK_KINDS = ("XC", "XO", "XA", "XC+XO", "XO+XA", "XC+XA", "XC+XO+XA")

_DIM_OF = {"XC": "compiler", "XO": "optimization", "XA": "architecture"}


def task_dims(kind: str) -> frozenset[str]:
    """Dimensions in which a pair of the given task kind must differ."""
    parts = kind.split("+")
    if kind not in TASK_KINDS or len(set(parts)) != len(parts):
        raise MetricError(f"unknown task kind {kind!r}; "
                          f"expected one of {TASK_KINDS}")
    return frozenset(_DIM_OF[p] for p in parts)


def _differing_dims(a: FunctionMeta, b: FunctionMeta) -> frozenset[str]:
    out = set()
    if (a.compiler, a.compiler_version) != (b.compiler, b.compiler_version):
        out.add("compiler")
    if a.optimization != b.optimization:
        out.add("optimization")
    if a.architecture != b.architecture:
        out.add("architecture")
    return frozenset(out)


def pair_matches_task(a: FunctionMeta, b: FunctionMeta, kind: str) -> bool:
    """True when a and b differ in exactly the task's dimensions."""
    return _differing_dims(a, b) == task_dims(kind)


def label_pair(a: FunctionMeta, b: FunctionMeta) -> int:
    """1 when both instances come from the same source function."""
    return int(a.source_identity() == b.source_identity())


@dataclass
class FunctionEmbedding:
    meta: FunctionMeta
    vector: np.ndarray

    def to_dict(self) -> dict:
        return {"key": self.meta.key(), "meta": self.meta.to_dict(),
                "vector": [float(v) for v in self.vector]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FunctionEmbedding":
        return cls(meta=FunctionMeta.from_dict(d["meta"]),
                   vector=np.asarray(d["vector"], dtype=np.float64))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise MetricError(f"cosine of vectors with shapes {a.shape} "
                          f"and {b.shape} is undefined")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise MetricError("cosine similarity undefined for zero-norm input")
    return float(np.dot(a, b) / (na * nb))


def build_task_pairs(metas: Sequence[FunctionMeta], kind: str, n_pos: int,
                     n_neg: int, seed: int = 0,
                     ) -> list[tuple[int, int, int]]:
    """Sample labeled index pairs for one task.

    Positives share a source identity, negatives do not; both differ in
    exactly the task dimensions. Raises when the corpus cannot supply the
    requested counts.
    """
    if n_pos < 1 or n_neg < 0:
        raise ValueError(f"need n_pos >= 1 and n_neg >= 0, "
                         f"got {n_pos}, {n_neg}")
    pos, neg = [], []
    for i in range(len(metas)):
        for j in range(i + 1, len(metas)):
            if not pair_matches_task(metas[i], metas[j], kind):
                continue
            if label_pair(metas[i], metas[j]):
                pos.append((i, j))
            else:
                neg.append((i, j))
    if len(pos) < n_pos or len(neg) < n_neg:
        raise MetricError(
            f"task {kind}: corpus supplies {len(pos)} positive / {len(neg)} "
            f"negative pairs, requested {n_pos} / {n_neg}")
    rng = rng_for(seed, "task-pairs", kind)
    pos_idx = rng.choice(len(pos), size=n_pos, replace=False)
    neg_idx = rng.choice(len(neg), size=n_neg, replace=False)
    out = [(pos[i][0], pos[i][1], 1) for i in sorted(int(x) for x in pos_idx)]
    out += [(neg[i][0], neg[i][1], 0) for i in sorted(int(x) for x in neg_idx)]
    return out


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-based AUC; tied scores count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"scores {scores.shape} and labels {labels.shape} "
                          f"must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"AUC undefined with {n_pos} positives and "
                          f"{n_neg} negatives")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)  # 1-based, ties averaged
        i = j
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


class EmbeddingIndex:
    """Ordered collection of embeddings supporting full-sort cosine search."""

    def __init__(self, entries: Iterable[FunctionEmbedding] = ()):
        self.entries: list[FunctionEmbedding] = list(entries)

    def add(self, entry: FunctionEmbedding) -> None:
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def matrix(self) -> np.ndarray:
        return np.stack([e.vector for e in self.entries])


@dataclass
class QueryResult:
    top: list[tuple[int, float]]  # (pool index, score), best first
    rank_of_gt: int               # 1-based
    pool_size: int


def search(query: FunctionEmbedding, pool: EmbeddingIndex,
           k: int) -> QueryResult:
    """Rank the pool by cosine similarity to the query.

    The pool must contain exactly one entry from the query's source
    function. Ties keep insertion order.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(pool) == 0:
        raise MetricError("cannot search an empty pool")
    scores = np.array([cosine_similarity(query.vector, e.vector)
                       for e in pool.entries])
    gt_hits = [i for i, e in enumerate(pool.entries)
               if label_pair(query.meta, e.meta)]
    if len(gt_hits) != 1:
        raise MetricError(f"pool must contain exactly one ground truth, "
                          f"found {len(gt_hits)}")
    order = np.argsort(-scores, kind="stable")
    rank_of_gt = int(np.nonzero(order == gt_hits[0])[0][0]) + 1
    top = [(int(i), float(scores[i])) for i in order[:k]]
    return QueryResult(top=top, rank_of_gt=rank_of_gt, pool_size=len(pool))


def build_pools(queries: Sequence[tuple[FunctionEmbedding, FunctionEmbedding]],
                corpus: Sequence[FunctionEmbedding], pool_size: int,
                seed: int = 0) -> list[tuple[FunctionEmbedding, EmbeddingIndex]]:
    """Assemble one pool per (query, ground truth) pair.

    Distractors are drawn from the corpus excluding everything that shares
    the query's source identity, so each pool holds exactly one match. Pool
    order is shuffled to keep tie-breaking neutral.
    """
    if pool_size < 2:
        raise ValueError(f"pool_size must be >= 2, got {pool_size}")
    out = []
    for qi, (query, gt) in enumerate(queries):
        if not label_pair(query.meta, gt.meta):
            raise MetricError("query and ground truth must share a source "
                              "identity")
        candidates = [e for e in corpus
                      if not label_pair(query.meta, e.meta)]
        if len(candidates) < pool_size - 1:
            raise MetricError(
                f"only {len(candidates)} distractor candidates for pool_size "
                f"{pool_size}")
        rng = rng_for(seed, "pool", qi)
        picked = rng.choice(len(candidates), size=pool_size - 1, replace=False)
        entries = [gt] + [candidates[int(i)] for i in picked]
        rng.shuffle(entries)
        out.append((query, EmbeddingIndex(entries)))
    return out


def recall_at_k(results: Sequence[QueryResult], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not results:
        raise MetricError("recall undefined over zero queries")
    return float(np.mean([r.rank_of_gt <= k for r in results]))


def mrr(results: Sequence[QueryResult]) -> float:
    if not results:
        raise MetricError("MRR undefined over zero queries")
    return float(np.mean([1.0 / r.rank_of_gt for r in results]))


RECALL_KS = (1, 10, 50)


def evaluate_task(embeddings: Sequence[FunctionEmbedding], kind: str,
                  n_queries: int, pool_size: int, seed: int = 0) -> dict:
    """Full one-to-one and one-to-many evaluation of one task."""
    metas = [e.meta for e in embeddings]
    pairs = build_task_pairs(metas, kind, n_pos=n_queries, n_neg=n_queries,
                             seed=seed)
    scores = [cosine_similarity(embeddings[i].vector, embeddings[j].vector)
              for i, j, _ in pairs]
    labels = [label for _, _, label in pairs]
    task_auc = auc(scores, labels)
    positive_pairs = [(embeddings[i], embeddings[j])
                      for i, j, label in pairs if label == 1]
    pools = build_pools(positive_pairs, embeddings, pool_size, seed)
    results = [search(query, pool, k=max(RECALL_KS))
               for query, pool in pools]
    report = {
        "task": kind,
        "auc": task_auc,
        "recall": {str(k): recall_at_k(results, k) for k in RECALL_KS},
        "mrr": mrr(results),
        "n_queries": len(results),
        "pool_size": pool_size,
        "seed": seed,
    }
    log.info("task %s: auc=%.3f recall@1=%.3f mrr=%.3f", kind, task_auc,
             report["recall"]["1"], report["mrr"])
    return report


def write_embeddings_jsonl(embeddings: Iterable[FunctionEmbedding],
                           path: str | Path) -> int:
    n = 0
    with open(path, "w") as fh:
        for e in embeddings:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
            n += 1
    return n


def read_embeddings_jsonl(path: str | Path) -> list[FunctionEmbedding]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(FunctionEmbedding.from_dict(json.loads(line)))
    return out
