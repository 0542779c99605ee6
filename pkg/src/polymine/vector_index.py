"""Cosine k-nearest-neighbour search: exact blocked search and an inverted-file index.

Ordering rule everywhere: cosine descending, ties broken by ascending row index.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .embedding_store import EmbeddingMatrix
from .errors import DimMismatch, KExceedsTargets, PolymineError, TooFewRows

QUERY_BLOCK = 1024
KMEANS_MAX_ITER = 25


@dataclass(frozen=True)
class NeighborList:
    query_row: int
    rows: np.ndarray  # int64, length <= k
    cosines: np.ndarray  # float64, same length

    @property
    def neighbors(self) -> list[tuple[int, float]]:
        return [(int(r), float(c)) for r, c in zip(self.rows, self.cosines)]

    def __len__(self):
        return len(self.rows)


def similarity(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Dot products accumulated in float64, snapped to the float32 grid.

    Snapping makes the value of a pair independent of which BLAS kernel (and
    therefore which summation order) produced it, so exact and IVF search agree
    bit-for-bit and blocked results do not depend on block shape.
    """
    s = np.asarray(queries, dtype=np.float64) @ np.asarray(targets, dtype=np.float64).T
    return s.astype(np.float32).astype(np.float64)


def topk_rows(scores: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k per row of a score block under the (score desc, index asc) order."""
    b, n = scores.shape
    k = min(k, n)
    if b == 0 or k == 0:
        return np.zeros((b, k), dtype=np.int64), np.zeros((b, k))
    if k < n:
        kth = -np.partition(-scores, k - 1, axis=1)[:, k - 1]
        mask = scores >= kth[:, None]
        counts = mask.sum(axis=1)
        idx = np.empty((b, k), dtype=np.int64)
        simple = counts == k
        if simple.all():
            idx[:] = np.nonzero(mask)[1].reshape(b, k)
        else:
            rows_simple = np.flatnonzero(simple)
            if rows_simple.size:
                idx[rows_simple] = np.nonzero(mask[rows_simple])[1].reshape(-1, k)
            for r in np.flatnonzero(~simple):
                idx[r] = np.argsort(-scores[r], kind="stable")[:k]
    else:
        idx = np.broadcast_to(np.arange(n, dtype=np.int64), (b, n)).copy()
    vals = np.take_along_axis(scores, idx, axis=1)
    order = np.lexsort((idx, -vals), axis=1)
    return np.take_along_axis(idx, order, axis=1), np.take_along_axis(vals, order, axis=1)


def _check_pair(queries: EmbeddingMatrix, targets: EmbeddingMatrix):
    if queries.dim != targets.dim:
        raise DimMismatch(f"query dim {queries.dim} != target dim {targets.dim}")


def _map_blocks(fn, n: int, workers: int):
    starts = list(range(0, n, QUERY_BLOCK))
    if workers <= 1 or len(starts) <= 1:
        return [fn(s) for s in starts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, starts))


def knn_exact_arrays(
    queries: EmbeddingMatrix, targets: EmbeddingMatrix, k: int, exclude_self: bool = False, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k as dense (n_queries, k) arrays of target rows and cosines."""
    _check_pair(queries, targets)
    if k < 1:
        raise PolymineError("k must be >= 1")
    available = targets.count - (1 if exclude_self else 0)
    if k > available:
        raise KExceedsTargets(f"k={k} but only {available} targets are available")
    if exclude_self and queries.count != targets.count:
        raise DimMismatch("exclude_self requires querying a matrix against itself")
    q = queries.as_f64()
    t = targets.as_f64()

    def block(start):
        s = similarity(q[start : start + QUERY_BLOCK], t)
        if exclude_self:
            r = np.arange(s.shape[0])
            s[r, start + r] = -np.inf
        return topk_rows(s, k)

    parts = _map_blocks(block, queries.count, workers)
    if not parts:
        return np.zeros((0, k), dtype=np.int64), np.zeros((0, k))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _as_lists(rows: np.ndarray, cos: np.ndarray) -> list[NeighborList]:
    out = []
    for i in range(rows.shape[0]):
        keep = rows[i] >= 0
        out.append(NeighborList(i, rows[i][keep], cos[i][keep]))
    return out


def knn_exact(
    queries: EmbeddingMatrix, targets: EmbeddingMatrix, k: int, exclude_self: bool = False, workers: int = 1
) -> list[NeighborList]:
    return _as_lists(*knn_exact_arrays(queries, targets, k, exclude_self, workers))


@dataclass(frozen=True)
class IvfIndex:
    centroids: EmbeddingMatrix
    cell_members: tuple  # tuple of int64 arrays, ascending rows
    n_probe: int
    targets: EmbeddingMatrix

    @property
    def n_cells(self) -> int:
        return self.centroids.count

    def with_probe(self, n_probe: int) -> "IvfIndex":
        if not 1 <= n_probe <= self.n_cells:
            raise PolymineError(f"n_probe must be in [1, {self.n_cells}], got {n_probe}")
        return IvfIndex(self.centroids, self.cell_members, n_probe, self.targets)


def default_cells(count: int) -> int:
    return max(1, int(round(math.sqrt(count))))


def default_probe(n_cells: int) -> int:
    return max(1, n_cells // 8)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(n > 0, v / np.where(n > 0, n, 1.0), v)


def _assign(x: np.ndarray, cent: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.empty(x.shape[0], dtype=np.int64)
    best = np.empty(x.shape[0])
    for s in range(0, x.shape[0], 4096):
        sims = similarity(x[s : s + 4096], cent)
        labels[s : s + 4096] = sims.argmax(axis=1)
        best[s : s + 4096] = sims[np.arange(sims.shape[0]), labels[s : s + 4096]]
    return labels, best


def _repair_empty(x, cent, labels, best):
    """Give each empty cell the worst-fitting member of the currently largest cell."""
    n_cells = cent.shape[0]
    while True:
        sizes = np.bincount(labels, minlength=n_cells)
        empty = np.flatnonzero(sizes == 0)
        if not empty.size:
            return
        big = int(np.argmax(sizes))
        if sizes[big] < 2:
            return
        members = np.flatnonzero(labels == big)
        worst = members[np.lexsort((members, best[members]))[0]]
        c = int(empty[0])
        cent[c] = x[worst]
        labels[worst] = c
        best[worst] = 1.0


def build_ivf(
    targets: EmbeddingMatrix, n_cells: Optional[int] = None, seed: int = 0, n_probe: Optional[int] = None
) -> IvfIndex:
    """Spherical k-means (at most 25 Lloyd iterations) followed by exhaustive assignment."""
    n_cells = default_cells(targets.count) if n_cells is None else n_cells
    if n_cells < 1:
        raise PolymineError("n_cells must be positive")
    if targets.count < n_cells:
        raise TooFewRows(f"{targets.count} rows cannot fill {n_cells} cells")
    x = targets.as_f64()
    rng = np.random.default_rng(seed)
    init = np.sort(rng.choice(targets.count, size=n_cells, replace=False))
    cent = x[init].copy()
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        new_labels, best = _assign(x, cent)
        _repair_empty(x, cent, new_labels, best)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        sums = np.zeros_like(cent)
        np.add.at(sums, labels, x)
        nonzero = np.linalg.norm(sums, axis=1) > 0
        cent[nonzero] = _unit(sums[nonzero])
    cent = cent.astype(np.float32).astype(np.float64)
    labels, best = _assign(x, cent)
    _repair_empty(x, cent, labels, best)
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n_cells + 1))
    members = tuple(order[bounds[c] : bounds[c + 1]] for c in range(n_cells))
    n_probe = default_probe(n_cells) if n_probe is None else n_probe
    centroids = EmbeddingMatrix(cent.astype(np.float32))
    return IvfIndex(centroids, members, 1, targets).with_probe(n_probe)


def knn_ivf_arrays(
    index: IvfIndex, queries: EmbeddingMatrix, k: int, exclude_self: bool = False, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Top-k over the union of each query's n_probe closest cells.

    Rows with fewer than k candidates are padded with row -1 / cosine -inf.
    """
    _check_pair(queries, index.targets)
    if k < 1:
        raise PolymineError("k must be >= 1")
    q = queries.as_f64()
    t = index.targets.as_f64()
    cent = index.centroids.as_f64()

    def block(start):
        qb = q[start : start + QUERY_BLOCK]
        probes, _ = topk_rows(similarity(qb, cent), index.n_probe)
        rows = np.full((qb.shape[0], k), -1, dtype=np.int64)
        cos = np.full((qb.shape[0], k), -np.inf)
        for i in range(qb.shape[0]):
            cand = np.sort(np.concatenate([index.cell_members[c] for c in probes[i]]))
            if exclude_self:
                cand = cand[cand != start + i]
            if not cand.size:
                continue
            s = similarity(qb[i : i + 1], t[cand])
            idx, vals = topk_rows(s, k)
            m = idx.shape[1]
            rows[i, :m] = cand[idx[0]]
            cos[i, :m] = vals[0]
        return rows, cos

    parts = _map_blocks(block, queries.count, workers)
    if not parts:
        return np.zeros((0, k), dtype=np.int64), np.zeros((0, k))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def knn_ivf(
    index: IvfIndex, queries: EmbeddingMatrix, k: int, exclude_self: bool = False, workers: int = 1
) -> list[NeighborList]:
    return _as_lists(*knn_ivf_arrays(index, queries, k, exclude_self, workers))


def recall_at_k(approx_rows: np.ndarray, exact_rows: np.ndarray) -> float:
    hits = 0
    for a, e in zip(approx_rows, exact_rows):
        hits += len(set(a[a >= 0].tolist()) & set(e.tolist()))
    return hits / exact_rows.size if exact_rows.size else 1.0
