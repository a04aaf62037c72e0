"""Degree-of-alignment measurements and the alignment-stage stopping rule.

The main measurement is the k-nearest-neighbour estimate of KL(P || Q)
between document-encoder outputs (sample of P) and query-encoder outputs
(sample of Q) on the same validation queries:

    KL_k = (a / n) * sum_i log(s_k(x_i) / r_k(x_i)) + log(m / (n - 1))

with ``r_k`` the k-th neighbour distance inside the P sample (self excluded)
and ``s_k`` the k-th neighbour distance into the Q sample.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels

DISTANCE_FLOOR = 1e-12


class DegenerateSampleWarning(RuntimeWarning):
    """Zero nearest-neighbour distances were clamped (duplicate points)."""


@dataclass(frozen=True)
class KLEstimate:
    value: float
    clamped: int
    n: int
    m: int
    dim: int

    @property
    def degenerate(self) -> bool:
        return self.clamped > 0


def kl_knn_details(x, x_prime, k: int = 1) -> KLEstimate:
    """Like :func:`kl_knn_estimate` but also reports how many distances were clamped."""
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x.ndim != 2 or x_prime.ndim != 2 or x.shape[1] != x_prime.shape[1]:
        raise ValueError(f"samples must be 2-d with equal width, got {x.shape} and {x_prime.shape}")
    n, dim = x.shape
    m = x_prime.shape[0]
    if k < 1 or n <= k or m < k:
        raise ValueError(f"need k >= 1, n > k and m >= k (k={k}, n={n}, m={m})")
    r = kernels.kth_neighbor_distances(x, x, k, exclude_self=True)
    s = kernels.kth_neighbor_distances(x, x_prime, k)
    clamped = int(np.sum(r < DISTANCE_FLOOR) + np.sum(s < DISTANCE_FLOOR))
    if clamped:
        warnings.warn(f"{clamped} nearest-neighbour distances clamped to {DISTANCE_FLOOR}",
                      DegenerateSampleWarning, stacklevel=3)
    r = np.maximum(r, DISTANCE_FLOOR)
    s = np.maximum(s, DISTANCE_FLOOR)
    value = dim / n * float(np.sum(np.log(s / r))) + math.log(m / (n - 1))
    return KLEstimate(value=value, clamped=clamped, n=n, m=m, dim=dim)


def kl_knn_estimate(x, x_prime, k: int = 1) -> float:
    """k-NN estimate of KL(P || Q) from samples ``x`` ~ P (n, a) and ``x_prime`` ~ Q (m, a).

    Finite-sample values can be negative. Duplicate points are clamped to a
    distance of 1e-12 and reported through :class:`DegenerateSampleWarning`.
    """
    return kl_knn_details(x, x_prime, k).value


# ---------------------------------------------------------------------------
# early stopping
# ---------------------------------------------------------------------------


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    STOP_THRESHOLD = "stop_threshold"
    STOP_PATIENCE = "stop_patience"
    STOP_MAX_EPOCHS = "stop_max_epochs"

    def __str__(self):
        return self.value

    @property
    def stops(self) -> bool:
        return self is not Decision.CONTINUE


@dataclass
class EarlyStopState:
    threshold: float
    patience: int = 3
    best_value: float = math.inf
    epochs_since_improvement: int = 0
    history: list = field(default_factory=list)


def should_stop(state: EarlyStopState, value: float) -> Decision:
    """Record ``value`` and decide whether alignment should end.

    Stops on ``value < threshold``; otherwise stops once ``patience``
    consecutive values have failed to go below the best seen so far.
    """
    epoch = len(state.history) + 1
    if value < state.best_value:
        state.best_value = value
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    if value < state.threshold:
        decision = Decision.STOP_THRESHOLD
    elif state.epochs_since_improvement >= state.patience:
        decision = Decision.STOP_PATIENCE
    else:
        decision = Decision.CONTINUE
    state.history.append((epoch, value, decision.value))
    return decision


def write_alignment_csv(history, path) -> None:
    """``epoch,kl_estimate,decision`` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,kl_estimate,decision\n")
        for epoch, value, decision in history:
            fh.write(f"{epoch},{value!r},{decision}\n")


def ann_validation_score(encode_queries, encode_docs, queries: Mapping[str, object],
                         corpus: Mapping[str, object], qrels, k: int = 10) -> float:
    """Mean nDCG@k of a fresh exact index, the retrieval-based alignment signal.

    Args:
        encode_queries: maps a list of query inputs to unit vectors (n, a).
        encode_docs: maps a list of document inputs to unit vectors (m, a).
        queries: query id -> query input (text or token ids).
        corpus: document id -> document input.
        qrels: query id -> {doc id: relevance}.
        k: retrieval depth and nDCG cutoff.
    """
    from .retrieval import build_index, evaluate, search_topk_batch

    if not queries or not corpus or not qrels:
        raise ValueError("queries, corpus and qrels must be non-empty")
    doc_ids = list(corpus)
    index = build_index(doc_ids, lambda ids: encode_docs([corpus[d] for d in ids]))
    qids = list(queries)
    rankings = search_topk_batch(index, encode_queries([queries[q] for q in qids]), k)
    return evaluate(dict(zip(qids, rankings)), qrels, (k,))[f"nDCG@{k}"]


def knee_threshold(values, margin: float = 0.1) -> float:
    """Threshold calibrated from one alignment run's KL curve.

    The knee is the epoch lying farthest below the straight line joining the
    first and last values; the threshold sits ``margin`` (relative) above the
    knee value so that a comparable run stops there.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 3 or not np.all(np.isfinite(v)):
        raise ValueError("need at least 3 finite KL values")
    t = np.arange(v.size)
    chord = v[0] + (v[-1] - v[0]) * t / (v.size - 1)
    knee = int(np.argmax(chord - v))
    return float(v[knee] + margin * abs(v[knee]))
