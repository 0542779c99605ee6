"""Margin-criterion global mining, over-segmentation candidates, and overlap resolution."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .embedding_store import EmbeddingStore, SegmentRecord
from .errors import (
    DegenerateDenominator,
    DimMismatch,
    EmptyStore,
    MissingSpan,
    OverlappingVadUnits,
    PolymineError,
    UnsortedInput,
)
from .vector_index import build_ivf, knn_exact_arrays, knn_ivf_arrays

log = logging.getLogger(__name__)

PAIR_HEADER = ("src_id", "tgt_id", "cosine", "margin", "direction")


@dataclass(frozen=True)
class MiningConfig:
    k: int = 16
    threshold: float = 1.15
    margin_kind: str = "ratio"  # "ratio" | "difference"
    max_alignments_per_segment: Optional[int] = None
    # IVF knobs; None means the index defaults
    n_cells: Optional[int] = None
    n_probe: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise PolymineError("k must be >= 1")
        if not math.isfinite(self.threshold) and self.threshold != math.inf:
            raise PolymineError("threshold must be finite")
        if self.margin_kind not in ("ratio", "difference"):
            raise PolymineError(f"unknown margin kind {self.margin_kind!r}")
        if self.max_alignments_per_segment is not None and self.max_alignments_per_segment < 1:
            raise PolymineError("max_alignments_per_segment must be positive")


@dataclass(frozen=True)
class MinedPair:
    src_id: str
    tgt_id: str
    cosine: float
    margin: float
    direction: str  # "forward" | "backward" | "both"

    def sort_key(self):
        return (-self.margin, self.src_id, self.tgt_id)


def margin_score(cos_xy: float, nn_x: Sequence[float], nn_y: Sequence[float], kind: str = "ratio") -> float:
    k = len(nn_x)
    if k == 0 or len(nn_y) != k:
        raise PolymineError(f"neighbour lists must both have k >= 1 entries, got {len(nn_x)} and {len(nn_y)}")
    denom = math.fsum(nn_x) / (2 * k) + math.fsum(nn_y) / (2 * k)
    return _apply_margin(cos_xy, denom, kind)


def _apply_margin(cos_xy, denom, kind):
    if kind == "ratio":
        if denom <= 1e-9:
            raise DegenerateDenominator(f"margin denominator {denom} <= 1e-9")
        return cos_xy / denom
    if kind == "difference":
        return cos_xy - denom
    raise PolymineError(f"unknown margin kind {kind!r}")


def _neighbour_mean(cos: np.ndarray) -> np.ndarray:
    # padded IVF slots (-inf) are excluded from the average
    valid = np.isfinite(cos)
    return np.where(valid, cos, 0.0).sum(axis=1) / np.maximum(valid.sum(axis=1), 1)


def _knn(queries, targets, cfg: MiningConfig, index_mode: str, seed: int, workers: int, exclude_self=False):
    if index_mode == "exact":
        return knn_exact_arrays(queries, targets, cfg.k, exclude_self, workers=workers)
    if index_mode == "ivf":
        index = build_ivf(targets, cfg.n_cells, seed=seed, n_probe=cfg.n_probe)
        return knn_ivf_arrays(index, queries, cfg.k, exclude_self, workers=workers)
    raise PolymineError(f"unknown index mode {index_mode!r}")


def mine(
    src: EmbeddingStore,
    tgt: EmbeddingStore,
    cfg: MiningConfig = MiningConfig(),
    index_mode: str = "exact",
    seed: int = 0,
    workers: int = 1,
) -> list[MinedPair]:
    """Score forward and backward k-NN candidates with the margin criterion.

    Both directions are unioned; a pair found both ways is marked "both". Pairs
    with margin below the threshold (or non-positive) are dropped. Mining a
    store against itself (the same object) excludes each row's self-match.
    """
    if len(src) == 0 or len(tgt) == 0:
        raise EmptyStore("cannot mine with an empty store")
    if src.matrix.dim != tgt.matrix.dim:
        raise DimMismatch(f"src dim {src.matrix.dim} != tgt dim {tgt.matrix.dim}")
    if not (src.matrix.normalized and tgt.matrix.normalized):
        raise PolymineError("both stores must be normalized before mining")

    self_mine = src is tgt
    fwd_rows, fwd_cos = _knn(src.matrix, tgt.matrix, cfg, index_mode, seed, workers, self_mine)
    bwd_rows, bwd_cos = _knn(tgt.matrix, src.matrix, cfg, index_mode, seed + 1, workers, self_mine)
    avg_x = _neighbour_mean(fwd_cos)
    avg_y = _neighbour_mean(bwd_cos)

    found: dict[tuple[int, int], list] = {}
    for direction, rows, cos, swap in (("forward", fwd_rows, fwd_cos, False), ("backward", bwd_rows, bwd_cos, True)):
        for q in range(rows.shape[0]):
            for r, c in zip(rows[q], cos[q]):
                if r < 0:
                    continue
                key = (int(r), q) if swap else (q, int(r))
                if key in found:
                    found[key][1] = "both"
                else:
                    found[key] = [float(c), direction]

    pairs = []
    degenerate = 0
    for (x, y), (c, direction) in found.items():
        try:
            m = _apply_margin(c, (avg_x[x] + avg_y[y]) / 2.0, cfg.margin_kind)
        except DegenerateDenominator:
            degenerate += 1
            continue
        if m > 0 and m >= cfg.threshold:
            pairs.append(MinedPair(src.ids[x], tgt.ids[y], c, float(m), direction))
    if degenerate:
        log.warning("skipped %d candidate pairs with a non-positive margin denominator", degenerate)
    pairs.sort(key=MinedPair.sort_key)
    if cfg.max_alignments_per_segment is not None:
        pairs = cap_alignments(pairs, cfg.max_alignments_per_segment)
    return pairs


def cap_alignments(pairs: Sequence[MinedPair], m: int) -> list[MinedPair]:
    """Greedy in margin order: keep a pair while both its segments have < m kept pairs."""
    used_src: dict[str, int] = defaultdict(int)
    used_tgt: dict[str, int] = defaultdict(int)
    kept = []
    for p in sorted(pairs, key=MinedPair.sort_key):
        if used_src[p.src_id] < m and used_tgt[p.tgt_id] < m:
            used_src[p.src_id] += 1
            used_tgt[p.tgt_id] += 1
            kept.append(p)
    return kept


def format_pairs(pairs: Iterable[MinedPair]) -> str:
    lines = ["\t".join(PAIR_HEADER)]
    for p in pairs:
        lines.append(f"{p.src_id}\t{p.tgt_id}\t{float(p.cosine)!r}\t{float(p.margin)!r}\t{p.direction}")
    return "\n".join(lines) + "\n"


def write_pairs(path, pairs: Iterable[MinedPair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_pairs(pairs))


def read_pairs(path) -> list[MinedPair]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != PAIR_HEADER:
            raise PolymineError(f"{path}: unexpected pair header {header}")
        out = []
        for line in fh:
            if line.strip():
                s, t, c, m, d = line.rstrip("\n").split("\t")
                out.append(MinedPair(s, t, float(c), float(m), d))
    return out


# -- over-segmentation ------------------------------------------------------------


def make_overlapping_candidates(vad_units: Sequence[SegmentRecord], max_merge: int) -> list[SegmentRecord]:
    """Every contiguous run of 1..max_merge consecutive VAD units becomes a candidate."""
    if max_merge < 1:
        raise PolymineError("max_merge must be positive")
    units = list(vad_units)
    if not units:
        return []
    for u in units:
        if not u.has_span:
            raise MissingSpan(f"VAD unit {u.id} lacks start/end")
    uri = units[0].audio_uri
    for prev, cur in zip(units, units[1:]):
        if cur.audio_uri != uri:
            raise PolymineError("all VAD units must come from the same audio_uri")
        if cur.start_ms < prev.start_ms:
            raise UnsortedInput(f"{cur.id} starts before {prev.id}")
        if cur.start_ms < prev.end_ms:
            raise OverlappingVadUnits(f"{cur.id} overlaps {prev.id}")

    out = []
    for i in range(len(units)):
        for j in range(i, min(i + max_merge, len(units))):
            run = units[i : j + 1]
            start, end = run[0].start_ms, run[-1].end_ms
            texts = [u.text for u in run]
            scores = [u.lid_score for u in run]
            lid = None
            if all(s is not None for s in scores):
                durs = [u.end_ms - u.start_ms for u in run]
                lid = min(1.0, math.fsum(s * d for s, d in zip(scores, durs)) / sum(durs))
            out.append(
                SegmentRecord(
                    id=f"{uri}@{start}-{end}",
                    lang=run[0].lang,
                    modality="speech",
                    audio_uri=uri,
                    start_ms=start,
                    end_ms=end,
                    text=" ".join(texts) if all(t is not None for t in texts) else None,
                    lid_score=lid,
                    parent_id=uri,
                )
            )
    return out


def segment_corpus(units: Sequence[SegmentRecord], max_merge: int) -> list[SegmentRecord]:
    """Candidates for every audio file in a mixed unit list; text records pass through."""
    by_uri: dict[str, list] = defaultdict(list)
    passthrough = []
    for u in units:
        if u.modality == "speech" and not u.has_span:
            raise MissingSpan(f"VAD unit {u.id} lacks start/end")
        (by_uri[u.audio_uri] if u.modality == "speech" else passthrough).append(u)
    out = []
    for uri in sorted(by_uri):
        group = sorted(by_uri[uri], key=lambda u: (u.start_ms, u.end_ms))
        out.extend(make_overlapping_candidates(group, max_merge))
    return out + passthrough


# -- overlap resolution -------------------------------------------------------------


def best_interval_set(intervals: Sequence[tuple[float, float, float]]) -> tuple[float, list[int]]:
    """Maximum-weight set of pairwise non-overlapping half-open intervals.

    `intervals` holds (start, end, weight). Returns (total, chosen indices ascending).
    Classic DP over intervals sorted by end time with a binary-searched predecessor.
    """
    n = len(intervals)
    if n == 0:
        return 0.0, []
    order = sorted(range(n), key=lambda i: (intervals[i][1], intervals[i][0], i))
    ends = [intervals[i][1] for i in order]
    pred = [0] * n
    for j, i in enumerate(order):
        pred[j] = _bisect_right(ends, intervals[i][0], j)
    best = [0.0] * (n + 1)
    take = [False] * (n + 1)
    for j in range(1, n + 1):
        w = intervals[order[j - 1]][2]
        with_j = w + best[pred[j - 1]]
        if with_j > best[j - 1]:
            best[j], take[j] = with_j, True
        else:
            best[j] = best[j - 1]
    chosen = []
    j = n
    while j > 0:
        if take[j]:
            chosen.append(order[j - 1])
            j = pred[j - 1]
        else:
            j -= 1
    chosen.sort()
    return math.fsum(intervals[i][2] for i in chosen), chosen


def _bisect_right(ends, x, hi):
    # number of intervals among the first `hi` (by end) that end at or before x
    lo = 0
    while lo < hi:
        mid = (lo + hi) // 2
        if ends[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def _resolve_side(pairs: list[MinedPair], segments, side: str) -> list[MinedPair]:
    attr = "src_id" if side == "src" else "tgt_id"
    weight: dict[str, float] = defaultdict(float)
    for p in pairs:
        weight[getattr(p, attr)] += p.margin
    groups: dict[tuple, list[str]] = defaultdict(list)
    for seg_id in weight:
        rec = segments.get(seg_id)
        if rec is None or rec.modality != "speech" or rec.parent_id is None:
            continue
        if not rec.has_span:
            raise MissingSpan(f"speech segment {seg_id} lacks start/end")
        groups[(rec.parent_id, rec.audio_uri)].append(seg_id)
    losers = set()
    for key in sorted(groups):
        ids = sorted(groups[key])
        spans = [(segments[i].start_ms, segments[i].end_ms, weight[i]) for i in ids]
        _, chosen = best_interval_set(spans)
        keep = {ids[i] for i in chosen}
        losers.update(i for i in ids if i not in keep)
    return [p for p in pairs if getattr(p, attr) not in losers]


def resolve_overlaps(pairs: Sequence[MinedPair], segments: dict[str, SegmentRecord]) -> list[MinedPair]:
    """Keep, per (parent_id, audio_uri) group, the non-overlapping segments of maximum total margin.

    A segment's weight is the summed margin of its pairs. The source side is resolved
    first, then the target side on the surviving pairs.
    """
    out = _resolve_side(list(pairs), segments, "src")
    out = _resolve_side(out, segments, "tgt")
    return sorted(out, key=MinedPair.sort_key)

