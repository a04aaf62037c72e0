"""Relevance scoring, maxP aggregation and the scaled contrastive loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ShapeError
from .numerics import Tensor

_MASKED = -1e30  # additive logit for excluded negatives


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 1.0
    score_scale: float = 20.0
    num_negatives: int = 64

    def __post_init__(self):
        if self.temperature <= 0 or self.score_scale <= 0:
            raise ValueError("temperature and score_scale must be positive")
        if self.num_negatives < 1:
            raise ValueError("num_negatives must be >= 1")

    @property
    def logit_factor(self) -> float:
        return self.score_scale / self.temperature


def relevance(q_vec, d_vec) -> float:
    """Dot product of a query and a document representation."""
    q = np.asarray(q_vec, dtype=np.float64)
    d = np.asarray(d_vec, dtype=np.float64)
    if q.shape != d.shape:
        raise ShapeError(f"dimension mismatch: {q.shape} vs {d.shape}")
    return float(q @ d)


def collapse_loss(num_negatives: int) -> float:
    """Loss value when every score is identical: ``ln(num_negatives + 1)``."""
    return math.log(num_negatives + 1)


def batch_contrastive_loss(q, pos, negs, cfg: LossConfig) -> Tensor:
    """Mean contrastive loss over a batch.

    Args:
        q: (B, a) query representations.
        pos: (B, a) positive document representations.
        negs: (B, K, a) negative document representations.

    The positive's logit sits at column 0; logits are ``score_scale * phi / tau``.
    """
    q, pos, negs = nx.as_tensor(q), nx.as_tensor(pos), nx.as_tensor(negs)
    if negs.ndim != 3 or negs.shape[1] < 1:
        raise ValueError("need at least one negative per query")
    if not (q.shape == pos.shape and negs.shape[0] == q.shape[0] and negs.shape[2] == q.shape[1]):
        raise ShapeError(f"incompatible shapes q={q.shape} pos={pos.shape} negs={negs.shape}")
    bsz = q.shape[0]
    pos_score = (q * pos).sum(axis=1, keepdims=True)
    neg_score = (negs @ q.reshape(bsz, -1, 1)).reshape(bsz, -1)
    logits = nx.concat([pos_score, neg_score], axis=1) * cfg.logit_factor
    return nx.cross_entropy(logits, np.zeros(bsz, dtype=np.int64))


def shared_negative_loss(q, pos, pool, in_batch_valid, pool_valid, cfg: LossConfig) -> Tensor:
    """Contrastive loss over in-batch positives and a shared pool of negatives.

    Row ``i`` scores its positive ``pos[i]`` against ``pos[j]`` wherever
    ``in_batch_valid[i, j]`` and against ``pool[c]`` wherever
    ``pool_valid[i, c]``. Masked entries get zero probability, so a row with
    exactly ``num_negatives`` valid entries has the value of
    :func:`batch_contrastive_loss` on those negatives. All inputs may carry
    gradient.

    Args:
        q: (B, a) query representations.
        pos: (B, a) positive document representations.
        pool: (P, a) shared negative document representations.
        in_batch_valid: (B, B) boolean mask.
        pool_valid: (B, P) boolean mask.
    """
    q, pos, pool = nx.as_tensor(q), nx.as_tensor(pos), nx.as_tensor(pool)
    bsz = q.shape[0]
    in_batch_valid = np.asarray(in_batch_valid, dtype=bool)
    pool_valid = np.asarray(pool_valid, dtype=bool)
    if in_batch_valid.shape != (bsz, bsz) or pool_valid.shape != (bsz, pool.shape[0]):
        raise ShapeError("mask shapes do not match the batch")
    parts = [(q * pos).sum(axis=1, keepdims=True), nx.matmul(q, nx.transpose(pos))]
    valid = [np.ones((bsz, 1), dtype=bool), in_batch_valid]
    if pool.shape[0]:
        parts.append(nx.matmul(q, nx.transpose(pool)))
        valid.append(pool_valid)
    mask = np.where(np.concatenate(valid, axis=1), 0.0, _MASKED)
    logits = nx.concat(parts, axis=1) * cfg.logit_factor + mask
    return nx.cross_entropy(logits, np.zeros(bsz, dtype=np.int64))


def contrastive_loss(q_vec, pos_vec, neg_vecs, cfg: LossConfig | None = None) -> Tensor:
    """Contrastive loss for a single query. Differentiable in all vector inputs."""
    cfg = cfg or LossConfig()
    q_vec, pos_vec = nx.as_tensor(q_vec), nx.as_tensor(pos_vec)
    if isinstance(neg_vecs, Tensor):
        negs = neg_vecs
    else:
        if len(neg_vecs) == 0:
            raise ValueError("empty negative set")
        if any(isinstance(v, Tensor) for v in neg_vecs):
            negs = nx.concat([nx.as_tensor(v).reshape(1, -1) for v in neg_vecs], axis=0)
        else:
            negs = Tensor(np.asarray(neg_vecs, dtype=np.float64))
    if negs.ndim != 2 or negs.shape[0] == 0:
        raise ValueError("empty negative set")
    d = q_vec.shape[-1]
    return batch_contrastive_loss(q_vec.reshape(1, d), pos_vec.reshape(1, d),
                                  negs.reshape(1, negs.shape[0], d), cfg)


def maxp_score(q_vec, passage_vecs) -> float:
    """Document score as the best of its passages' scores."""
    passages = np.asarray(passage_vecs, dtype=np.float64)
    if passages.size == 0:
        raise ValueError("document has no passages")
    passages = np.atleast_2d(passages)
    q = np.asarray(q_vec, dtype=np.float64)
    if passages.shape[1] != q.shape[0]:
        raise ShapeError(f"dimension mismatch: {q.shape} vs {passages.shape}")
    # row-wise products, so a passage's score does not depend on its neighbours
    return float(np.max((passages * q).sum(axis=1)))
