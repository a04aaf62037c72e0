"""Hot numeric inner loops, each with a numba and a pure-numpy implementation.

Public names (``kth_neighbor_distances``, ``topk_order``, ``group_max``, ``gelu``)
dispatch to the backend picked in :mod:`daftir._accel`. The ``*_numba`` and
``*_numpy`` variants are importable directly for tests and benchmarks.
"""
from __future__ import annotations

import numpy as np

from . import _accel
from ._accel import njit, prange

_ROW_CHUNK = 128


# ---------------------------------------------------------------------------
# k-th nearest neighbour distances
# ---------------------------------------------------------------------------


def kth_neighbor_distances_numpy(x, y, k, exclude_self=False):
    """Euclidean distance from every row of ``x`` to its k-th nearest row of ``y``.

    With ``exclude_self`` the two arrays must be the same sample and row ``i``
    of ``y`` is skipped when scanning neighbours of row ``i`` of ``x``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, _ROW_CHUNK):
        stop = min(n, start + _ROW_CHUNK)
        diff = x[start:stop, None, :] - y[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        if exclude_self:
            rows = np.arange(stop - start)
            d2[rows, rows + start] = np.inf
        part = np.partition(d2, k - 1, axis=1)[:, k - 1]
        out[start:stop] = np.sqrt(part)
    return out


@njit(parallel=True)
def _kth_neighbor_distances_jit(x, y, k, exclude_self):
    n, dim = x.shape
    m = y.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in prange(n):
        best = np.full(k, np.inf)
        for j in range(m):
            if exclude_self and j == i:
                continue
            acc = 0.0
            for c in range(dim):
                t = x[i, c] - y[j, c]
                acc += t * t
            if acc < best[k - 1]:
                pos = k - 1
                while pos > 0 and best[pos - 1] > acc:
                    best[pos] = best[pos - 1]
                    pos -= 1
                best[pos] = acc
        out[i] = np.sqrt(best[k - 1])
    return out


def kth_neighbor_distances_numba(x, y, k, exclude_self=False):
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    return _kth_neighbor_distances_jit(x, y, int(k), bool(exclude_self))


# ---------------------------------------------------------------------------
# top-k ordering with deterministic tie-break
# ---------------------------------------------------------------------------


def topk_order_numpy(scores, tie_key, k):
    """Indices of the ``k`` best entries per row of ``scores``.

    Order is descending score, ties broken by ascending ``tie_key``.
    ``scores`` is (B, n), ``tie_key`` is (n,) of integers; returns (B, min(k, n)).
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    tie_key = np.asarray(tie_key, dtype=np.int64)
    n = scores.shape[1]
    k = min(int(k), n)
    out = np.empty((scores.shape[0], k), dtype=np.int64)
    for b in range(scores.shape[0]):
        out[b] = np.lexsort((tie_key, -scores[b]))[:k]
    return out


@njit(parallel=True)
def _topk_order_jit(scores, tie_key, k):
    bsz, n = scores.shape
    out = np.empty((bsz, k), dtype=np.int64)
    for b in prange(bsz):
        idx = np.empty(k, dtype=np.int64)
        filled = 0
        for j in range(n):
            s = scores[b, j]
            t = tie_key[j]
            if filled == k:
                last = idx[k - 1]
                ls = scores[b, last]
                if s < ls or (s == ls and t > tie_key[last]):
                    continue
                pos = k - 1
            else:
                pos = filled
                filled += 1
            while pos > 0:
                prev = idx[pos - 1]
                ps = scores[b, prev]
                if ps > s or (ps == s and tie_key[prev] < t):
                    break
                idx[pos] = prev
                pos -= 1
            idx[pos] = j
        out[b] = idx
    return out


def topk_order_numba(scores, tie_key, k):
    scores = np.ascontiguousarray(np.atleast_2d(scores), dtype=np.float64)
    tie_key = np.ascontiguousarray(tie_key, dtype=np.int64)
    k = min(int(k), scores.shape[1])
    return _topk_order_jit(scores, tie_key, k)


# ---------------------------------------------------------------------------
# group-by max (maxP aggregation)
# ---------------------------------------------------------------------------


def group_max_numpy(values, groups, n_groups):
    """Per-group maximum of ``values`` along the last axis. Empty groups get -inf."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    groups = np.asarray(groups, dtype=np.int64)
    out = np.full((values.shape[0], n_groups), -np.inf)
    for b in range(values.shape[0]):
        np.maximum.at(out[b], groups, values[b])
    return out


@njit(parallel=True)
def _group_max_jit(values, groups, n_groups):
    bsz, n = values.shape
    out = np.full((bsz, n_groups), -np.inf)
    for b in prange(bsz):
        row = out[b]
        for j in range(n):
            g = groups[j]
            # a branchless update: the compare-and-store form mispredicts on random scores
            row[g] = max(row[g], values[b, j])
    return out


def group_max_numba(values, groups, n_groups):
    values = np.ascontiguousarray(np.atleast_2d(values), dtype=np.float64)
    groups = np.ascontiguousarray(groups, dtype=np.int64)
    return _group_max_jit(values, groups, int(n_groups))


# ---------------------------------------------------------------------------
# fused GELU (tanh approximation): value and derivative in one pass
# ---------------------------------------------------------------------------

_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def gelu_numpy(x):
    """Return ``(gelu(x), d gelu / dx)`` elementwise."""
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    half = 0.5 * (1.0 + t)
    value = x * half
    deriv = half + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
    return value, deriv


@njit
def _gelu_jit(flat, value, deriv):
    # serial: the loop is memory bound and thread dispatch costs more than it saves
    for i in range(flat.size):
        x = flat[i]
        x2 = x * x
        t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
        half = 0.5 * (1.0 + t)
        value[i] = x * half
        deriv[i] = half + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x2)


def gelu_numba(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    value = np.empty_like(x)
    deriv = np.empty_like(x)
    _gelu_jit(x.reshape(-1), value.reshape(-1), deriv.reshape(-1))
    return value, deriv


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if _accel.USE_NUMBA:
    kth_neighbor_distances = kth_neighbor_distances_numba
    topk_order = topk_order_numba
    group_max = group_max_numba
    gelu = gelu_numba
else:
    kth_neighbor_distances = kth_neighbor_distances_numpy
    topk_order = topk_order_numpy
    group_max = group_max_numpy
    gelu = gelu_numpy

BACKENDS = {
    "numpy": {
        "kth_neighbor_distances": kth_neighbor_distances_numpy,
        "topk_order": topk_order_numpy,
        "group_max": group_max_numpy,
        "gelu": gelu_numpy,
    },
}
if _accel.NUMBA_INSTALLED:
    BACKENDS["numba"] = {
        "kth_neighbor_distances": kth_neighbor_distances_numba,
        "topk_order": topk_order_numba,
        "group_max": group_max_numba,
        "gelu": gelu_numba,
    }
