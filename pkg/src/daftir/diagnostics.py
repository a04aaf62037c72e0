"""Representation-collapse statistics and figure-data dumps."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

VARIANCE_FLOOR = 1e-6
ERANK_FRACTION = 0.1


@dataclass(frozen=True)
class CollapseReport:
    mean_pairwise_cosine: float
    per_dim_variance: list
    total_variance: float
    effective_rank: float
    complete_collapse: bool
    dimensional_collapse: bool

    def to_dict(self) -> dict:
        return asdict(self)


def total_variance(vectors) -> float:
    """Sum of per-dimension variances."""
    v = np.asarray(vectors, dtype=np.float64)
    return float(v.var(axis=0).sum())


def effective_rank(vectors) -> float:
    """``exp`` of the entropy of the normalized singular values of the centered sample.

    A sample with no spread at all has effective rank 1.
    """
    v = np.asarray(vectors, dtype=np.float64)
    sv = np.linalg.svd(v - v.mean(axis=0), compute_uv=False)
    total = sv.sum()
    if total <= 0.0:
        return 1.0
    p = sv[sv > 0] / total
    return float(min(max(math.exp(-np.sum(p * np.log(p))), 1.0), v.shape[1]))


def collapse_report(vectors, variance_floor: float = VARIANCE_FLOOR,
                    erank_fraction: float = ERANK_FRACTION) -> CollapseReport:
    """Summarize how collapsed a set of (unit) representations is.

    Complete collapse: total variance below ``variance_floor``. Dimensional
    collapse: complete collapse, or effective rank below
    ``erank_fraction * dim``.
    """
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 2:
        raise ValueError("collapse_report needs at least 2 vectors")
    n, dim = v.shape
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    unit = v / np.where(norms > 0, norms, 1.0)
    gram = unit @ unit.T
    mean_cos = float((gram.sum() - np.trace(gram)) / (n * (n - 1)))
    per_dim = v.var(axis=0)
    tv = float(per_dim.sum())
    erank = effective_rank(v)
    complete = tv < variance_floor
    dimensional = complete or erank < erank_fraction * dim
    return CollapseReport(mean_cos, per_dim.tolist(), tv, erank, bool(complete), bool(dimensional))


def pca_project(vectors, out_dim: int = 2, tol: float = 1e-12):
    """Project onto the top ``out_dim`` principal axes.

    Each axis is sign-fixed so that its largest-magnitude loading is positive.
    Returns ``(coords, degenerate)`` where ``degenerate[j]`` marks axes with
    (numerically) zero variance; their coordinates are 0.
    """
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < out_dim:
        raise ValueError(f"need at least {out_dim} vectors")
    centered = v - v.mean(axis=0)
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    axes = np.zeros((out_dim, v.shape[1]))
    degenerate = np.ones(out_dim, dtype=bool)
    scale = max(1.0, float(np.abs(v).max()))
    for j in range(min(out_dim, vt.shape[0])):
        if sv[j] > tol * scale * math.sqrt(v.shape[0]):
            axis = vt[j]
            if axis[np.argmax(np.abs(axis))] < 0:
                axis = -axis
            axes[j] = axis
            degenerate[j] = False
    return centered @ axes.T, degenerate


def cluster_separation(queries, docs) -> float:
    """Centroid distance over the mean per-coordinate within-set standard deviation."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    d = np.atleast_2d(np.asarray(docs, dtype=np.float64))
    if q.shape[0] == 0 or d.shape[0] == 0:
        raise ValueError("both sets must be non-empty")
    gap = float(np.linalg.norm(q.mean(axis=0) - d.mean(axis=0)))
    spread = 0.5 * (math.sqrt(q.var(axis=0).mean()) + math.sqrt(d.var(axis=0).mean()))
    if spread == 0.0:
        return 0.0 if gap == 0.0 else math.inf
    return gap / spread


def write_pca_csv(query_vecs, doc_vecs, path) -> np.ndarray:
    """PCA of the pooled query+document sample, written as ``label,x,y`` rows."""
    q = np.atleast_2d(query_vecs)
    d = np.atleast_2d(doc_vecs)
    coords, degenerate = pca_project(np.vstack([q, d]), 2)
    labels = ["query"] * len(q) + ["document"] * len(d)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "x", "y"])
        for label, (x, y) in zip(labels, coords):
            w.writerow([label, repr(float(x)), repr(float(y))])
    return degenerate


def write_loss_csv(log_rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for row in log_rows:
            w.writerow([row["step"], repr(row["loss"])])
