"""Exact dense retrieval, maxP document ranking, metrics and TREC I/O."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .container import read_container, write_container
from .errors import DataFormatError, ShapeError

Ranking = list  # list of (id, score), best first
Qrels = dict  # query_id -> {doc_id: relevance}
INDEX_VERSION = 1


def id_sort_key(ids: Sequence[str]) -> np.ndarray:
    """Integer rank of every id under ascending order.

    Ids that all parse as integers sort numerically, anything else sorts as strings.
    """
    try:
        keys = [int(i) for i in ids]
    except (TypeError, ValueError):
        keys = [str(i) for i in ids]
    order = sorted(range(len(ids)), key=keys.__getitem__)
    rank = np.empty(len(ids), dtype=np.int64)
    rank[order] = np.arange(len(ids))
    return rank


@dataclass
class DenseIndex:
    ids: list
    vectors: np.ndarray
    doc_of: list | None = None
    _tie: np.ndarray = field(init=False, repr=False)
    _doc_ids: list | None = field(init=False, repr=False, default=None)
    _doc_groups: np.ndarray | None = field(init=False, repr=False, default=None)
    _doc_tie: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ShapeError(f"{len(self.ids)} ids but vectors of shape {self.vectors.shape}")
        norms = np.linalg.norm(self.vectors, axis=1)
        if self.vectors.size and np.max(np.abs(norms - 1.0)) > 1e-9:
            raise ValueError("index rows must be unit-norm")
        self._tie = id_sort_key(self.ids)
        if self.doc_of is not None:
            if len(self.doc_of) != len(self.ids):
                raise ShapeError("passage->document map must cover every passage")
            docs: dict = {}
            groups = np.empty(len(self.ids), dtype=np.int64)
            for i, d in enumerate(self.doc_of):
                groups[i] = docs.setdefault(d, len(docs))
            self._doc_ids = list(docs)
            self._doc_groups = groups
            self._doc_tie = id_sort_key(self._doc_ids)

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def save(self, path) -> None:
        meta = {"ids": [str(i) for i in self.ids],
                "doc_of": None if self.doc_of is None else [str(d) for d in self.doc_of]}
        write_container(path, "dense_index", INDEX_VERSION, meta, {"vectors": self.vectors})

    @classmethod
    def load(cls, path) -> "DenseIndex":
        manifest, arrays = read_container(path, "dense_index")
        meta = manifest["meta"]
        return cls(ids=meta["ids"], vectors=arrays["vectors"], doc_of=meta["doc_of"])


def build_index(ids: Sequence, encode_fn: Callable[[Sequence], np.ndarray],
                doc_of: Sequence | None = None) -> DenseIndex:
    """Encode every passage once, in the given order."""
    if len(ids) == 0:
        raise ValueError("cannot index an empty corpus")
    vectors = np.asarray(encode_fn(list(ids)), dtype=np.float64)
    return DenseIndex(list(ids), vectors, None if doc_of is None else list(doc_of))


def _scores(index: DenseIndex, q_vecs) -> np.ndarray:
    q = np.atleast_2d(np.asarray(q_vecs, dtype=np.float64))
    if q.shape[1] != index.dim:
        raise ShapeError(f"query dim {q.shape[1]} != index dim {index.dim}")
    return q @ index.vectors.T


def search_topk(index: DenseIndex, q_vec, k: int) -> Ranking:
    """Top ``min(k, |index|)`` passages by dot product; ties to the smaller id."""
    return search_topk_batch(index, np.asarray(q_vec)[None, :], k)[0]


def search_topk_batch(index: DenseIndex, q_vecs, k: int) -> list[Ranking]:
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = _scores(index, q_vecs)
    order = kernels.topk_order(scores, index._tie, k)
    return [[(index.ids[j], float(scores[b, j])) for j in order[b]] for b in range(scores.shape[0])]


def rank_documents_maxp(index: DenseIndex, q_vec, k: int) -> Ranking:
    """Top-k documents scored by their best passage."""
    return rank_documents_maxp_batch(index, np.asarray(q_vec)[None, :], k)[0]


def rank_documents_maxp_batch(index: DenseIndex, q_vecs, k: int) -> list[Ranking]:
    if index.doc_of is None:
        raise ValueError("index has no passage->document map")
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = _scores(index, q_vecs)
    doc_scores = kernels.group_max(scores, index._doc_groups, len(index._doc_ids))
    order = kernels.topk_order(doc_scores, index._doc_tie, k)
    return [[(index._doc_ids[j], float(doc_scores[b, j])) for j in order[b]]
            for b in range(doc_scores.shape[0])]


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def dcg(gains: Iterable[int], k: int) -> float:
    total = 0.0
    for rank, rel in enumerate(gains, 1):
        if rank > k:
            break
        if rel > 0:
            total += (2.0 ** rel - 1.0) / math.log2(rank + 1)
    return total


def query_metrics(ranked_ids: Sequence, judged: Mapping, cutoffs: Sequence[int]) -> dict[str, float]:
    rels = [judged.get(d, 0) for d in ranked_ids]
    n_rel = sum(1 for r in judged.values() if r >= 1)
    ideal = sorted(judged.values(), reverse=True)
    first_hit = next((i for i, r in enumerate(rels, 1) if r >= 1), None)
    out = {}
    for c in cutoffs:
        idcg = dcg(ideal, c)
        out[f"nDCG@{c}"] = dcg(rels, c) / idcg if idcg > 0 else 0.0
        out[f"MRR@{c}"] = 1.0 / first_hit if first_hit is not None and first_hit <= c else 0.0
        out[f"Recall@{c}"] = sum(1 for r in rels[:c] if r >= 1) / n_rel
    return out


def evaluate(run: Mapping[str, Ranking], qrels: Qrels, cutoffs: Sequence[int] = (10, 100, 1000),
             per_query: bool = False):
    """Mean nDCG@c, MRR@c and Recall@c over queries present in both run and qrels.

    Gain is ``2**rel - 1`` with a ``log2(rank + 1)`` discount; MRR and Recall
    count ``rel >= 1`` as relevant. Queries with no relevant judgment are
    skipped. Returns ``{metric: value}`` or, with ``per_query``, also the
    per-query table.
    """
    shared = [q for q in run if q in qrels]
    if not shared:
        raise ValueError("run and qrels have no query ids in common")
    table = {}
    for qid in sorted(shared):
        judged = qrels[qid]
        if not any(r >= 1 for r in judged.values()):
            continue
        table[qid] = query_metrics([d for d, _ in run[qid]], judged, cutoffs)
    if not table:
        raise ValueError("no evaluated query has a relevant document")
    names = list(next(iter(table.values())))
    metrics = {name: float(np.mean([row[name] for row in table.values()])) for name in names}
    return (metrics, table) if per_query else metrics


def random_mrr_baseline(num_docs: int, cutoff: int = 10) -> float:
    """Expected MRR@cutoff of a uniformly random ranking with one relevant document."""
    return sum(1.0 / r for r in range(1, min(cutoff, num_docs) + 1)) / num_docs


# ---------------------------------------------------------------------------
# TREC formats
# ---------------------------------------------------------------------------


def read_qrels(path) -> Qrels:
    """``query_id 0 doc_id relevance`` lines."""
    qrels: Qrels = defaultdict(dict)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataFormatError(path, lineno, f"expected 4 columns, got {len(parts)}")
            qid, _, did, rel = parts
            try:
                rel_i = int(rel)
            except ValueError:
                raise DataFormatError(path, lineno, f"relevance {rel!r} is not an integer") from None
            if rel_i < 0:
                raise DataFormatError(path, lineno, "relevance must be >= 0")
            if did in qrels[qid]:
                raise DataFormatError(path, lineno, f"duplicate judgment for ({qid}, {did})")
            qrels[qid][did] = rel_i
    return dict(qrels)


def write_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, judged in qrels.items():
            for did, rel in judged.items():
                fh.write(f"{qid} 0 {did} {rel}\n")


def write_run(run: Mapping[str, Ranking], path, tag: str = "daftir") -> None:
    """``query_id Q0 doc_id rank score tag`` lines, ranks from 1."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, ranking in run.items():
            for rank, (did, score) in enumerate(ranking, 1):
                fh.write(f"{qid} Q0 {did} {rank} {score:.17g} {tag}\n")


def read_run(path) -> dict[str, Ranking]:
    rows: dict = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise DataFormatError(path, lineno, f"expected 6 columns, got {len(parts)}")
            qid, _, did, rank, score, _tag = parts
            try:
                rows[qid].append((int(rank), did, float(score)))
            except ValueError:
                raise DataFormatError(path, lineno, "rank must be an integer and score a number") from None
    return {qid: [(did, score) for _, did, score in sorted(r, key=lambda t: t[0])]
            for qid, r in rows.items()}
