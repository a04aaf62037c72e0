"""Streaming negative cache with Gumbel-top-k negative sampling.

The cache holds ``ceil(alpha * |corpus|)`` document representations. After
every training step the ``ceil(rho * C)`` stalest entries are re-encoded.
Negatives for a query are drawn without replacement by perturbing the scaled
query-document scores with standard Gumbel noise and keeping the largest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .errors import CacheTooSmallError

EncodeFn = Callable[[Sequence[Hashable]], np.ndarray]


@dataclass
class NegativeCache:
    ids: list
    reps: np.ndarray
    ages: np.ndarray
    alpha: float
    rho: float
    rng: np.random.Generator
    position: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.position:
            self.position = {doc_id: i for i, doc_id in enumerate(self.ids)}

    @property
    def capacity(self) -> int:
        return len(self.ids)

    def __len__(self):
        return len(self.ids)

    @property
    def refresh_count(self) -> int:
        return min(self.capacity, math.ceil(self.rho * self.capacity))


def _check_fraction(name, value):
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must be in (0, 1], got {value}")


def init_cache(corpus: Sequence[Hashable], encode_fn: EncodeFn, alpha: float, rho: float,
               seed: int | np.random.Generator) -> NegativeCache:
    """Sample ``ceil(alpha * len(corpus))`` documents uniformly and encode them."""
    if len(corpus) == 0:
        raise ValueError("cannot build a negative cache from an empty corpus")
    _check_fraction("alpha", alpha)
    _check_fraction("rho", rho)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    capacity = min(len(corpus), math.ceil(alpha * len(corpus)))
    picked = np.sort(rng.choice(len(corpus), size=capacity, replace=False))
    ids = [corpus[i] for i in picked]
    reps = np.asarray(encode_fn(ids), dtype=np.float64)
    return NegativeCache(ids=ids, reps=reps, ages=np.zeros(capacity, dtype=np.int64),
                         alpha=alpha, rho=rho, rng=rng)


def gumbel_topk(logits: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Per-row indices of the ``count`` largest Gumbel-perturbed logits, best first.

    Entries equal to ``-inf`` are never selected.
    """
    logits = np.atleast_2d(logits)
    perturbed = logits + rng.gumbel(size=logits.shape)
    if count < logits.shape[1]:
        top = np.argpartition(-perturbed, count - 1, axis=1)[:, :count]
    else:
        top = np.broadcast_to(np.arange(logits.shape[1]), logits.shape).copy()
    order = np.argsort(-np.take_along_axis(perturbed, top, axis=1), axis=1, kind="stable")
    return np.take_along_axis(top, order, axis=1)


def sample_negative_positions(cache: NegativeCache, q_vecs: np.ndarray, count: int,
                              exclude: Sequence[Iterable[Hashable]] | None = None,
                              logit_factor: float = 20.0) -> np.ndarray:
    """Batch version of :func:`sample_negatives` returning (B, count) cache positions."""
    q_vecs = np.atleast_2d(np.asarray(q_vecs, dtype=np.float64))
    logits = logit_factor * (q_vecs @ cache.reps.T)
    if exclude is not None:
        for b, ex in enumerate(exclude):
            for doc_id in ex:
                pos = cache.position.get(doc_id)
                if pos is not None:
                    logits[b, pos] = -np.inf
    available = np.isfinite(logits).sum(axis=1).min()
    if count > available:
        raise CacheTooSmallError(f"cannot draw {count} negatives from {available} eligible cache entries")
    return gumbel_topk(logits, count, cache.rng)


def sample_negatives(cache: NegativeCache, q_vec, count: int, exclude: Iterable[Hashable] = (),
                     logit_factor: float = 20.0) -> list:
    """Draw ``count`` distinct non-excluded document ids for one query.

    Weights are ``softmax(logit_factor * <q, d>)`` over the cached documents;
    the draw uses the cache's own generator.
    """
    positions = sample_negative_positions(cache, np.asarray(q_vec)[None, :], count,
                                          [list(exclude)], logit_factor)[0]
    return [cache.ids[p] for p in positions]


def sample_shared_pool(cache: NegativeCache, q_vecs: np.ndarray, size: int,
                       exclude: Iterable[Hashable] = (), logit_factor: float = 20.0) -> np.ndarray:
    """Distinct cache positions pooled from every query's own Gumbel ranking.

    Each query ranks the non-excluded cache entries by Gumbel-perturbed
    ``logit_factor * <q, d>``; the pool takes the best not-yet-pooled entry
    of query 0, then query 1, and so on round-robin until ``size`` entries
    are collected. Every query therefore contributes its hardest sampled
    negatives, and the pool is small enough to re-encode with gradient.
    """
    q_vecs = np.atleast_2d(np.asarray(q_vecs, dtype=np.float64))
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    logits = logit_factor * (q_vecs @ cache.reps.T)
    for doc_id in exclude:
        pos = cache.position.get(doc_id)
        if pos is not None:
            logits[:, pos] = -np.inf
    available = int(np.isfinite(logits[0]).sum())
    if size > available:
        raise CacheTooSmallError(f"cannot pool {size} negatives from {available} eligible cache entries")
    ranked = gumbel_topk(logits, size, cache.rng)
    pool: list[int] = []
    seen: set[int] = set()
    cursor = np.zeros(len(ranked), dtype=np.int64)
    while len(pool) < size:
        for b in range(len(ranked)):
            while cursor[b] < size and int(ranked[b, cursor[b]]) in seen:
                cursor[b] += 1
            if cursor[b] < size:
                pick = int(ranked[b, cursor[b]])
                seen.add(pick)
                pool.append(pick)
                if len(pool) == size:
                    break
    return np.asarray(pool, dtype=np.int64)


def refresh(cache: NegativeCache, encode_fn: EncodeFn) -> np.ndarray:
    """Re-encode the ``ceil(rho * C)`` oldest entries; returns their positions.

    Ties in age go to the lower position, so refreshes sweep the cache in order.
    """
    stale = np.argsort(-cache.ages, kind="stable")[: cache.refresh_count]
    if stale.size:
        cache.reps[stale] = encode_fn([cache.ids[p] for p in stale])
    cache.ages += 1
    cache.ages[stale] = 0
    return stale
