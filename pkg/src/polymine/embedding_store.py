"""Dense embedding tables (EMB1 files), segment metadata, and id-aligned stores.

EMB1 layout, little-endian, no padding::

    bytes 0-3   b"EMB1"
    bytes 4-7   uint32 dim
    bytes 8-15  uint64 count
    then        count * dim float32, row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    DuplicateId,
    MissingEmbedding,
    MissingMetadata,
    NonFiniteValue,
    PolymineError,
    ZeroNormRow,
)

MAGIC = b"EMB1"
HEADER = struct.Struct("<4sIQ")
NORM_TOL = 1e-4


@dataclass(frozen=True)
class EmbeddingMatrix:
    data: np.ndarray  # (count, dim) float32
    normalized: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DimMismatch(f"expected a 2-d array, got shape {data.shape}")
        if data.shape[1] < 1:
            raise DimMismatch("dim must be positive")
        if data.dtype != np.float32:
            data = data.astype(np.float32)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.normalized and data.shape[0]:
            norms = np.linalg.norm(data.astype(np.float64), axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
            if bad.size:
                raise PolymineError(f"rows {bad[:10].tolist()} are flagged normalized but are not unit length")

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    @property
    def count(self) -> int:
        return int(self.data.shape[0])

    def __len__(self):
        return self.count

    def as_f64(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def take(self, rows) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.data[np.asarray(rows, dtype=np.int64)], self.normalized)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.normalized == other.normalized
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


def empty_matrix(dim: int) -> EmbeddingMatrix:
    return EmbeddingMatrix(np.zeros((0, dim), dtype=np.float32))


def to_bytes(m: EmbeddingMatrix) -> bytes:
    return HEADER.pack(MAGIC, m.dim, m.count) + m.data.astype("<f4", copy=False).tobytes(order="C")


def write_embeddings(path, m: EmbeddingMatrix) -> None:
    Path(path).write_bytes(to_bytes(m))


def from_bytes(buf: bytes) -> EmbeddingMatrix:
    if len(buf) < HEADER.size:
        raise BadMagic(f"file too short for an EMB1 header ({len(buf)} bytes)")
    magic, dim, count = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {magic!r}")
    if dim == 0:
        raise DimMismatch("header declares dim=0")
    payload = len(buf) - HEADER.size
    if payload != count * dim * 4:
        raise DimMismatch(
            f"payload is {payload} bytes but header declares count={count} x dim={dim} ({count * dim * 4} bytes)"
        )
    data = np.frombuffer(buf, dtype="<f4", offset=HEADER.size).reshape(count, dim).astype(np.float32)
    bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
    if bad.size:
        raise NonFiniteValue(bad.tolist())
    return EmbeddingMatrix(data)


def load_embeddings(path) -> EmbeddingMatrix:
    return from_bytes(Path(path).read_bytes())


def normalize(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit L2 norm.

    Rows already within 1e-6 of unit norm are left bit-identical, which makes the
    operation idempotent on float32 storage.
    """
    if m.count == 0:
        return EmbeddingMatrix(m.data, normalized=True)
    x = m.as_f64()
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormRow(int(zero[0]))
    out = m.data.copy()
    scale = np.abs(norms - 1.0) >= 1e-6
    out[scale] = (x[scale] / norms[scale, None]).astype(np.float32)
    return EmbeddingMatrix(out, normalized=True)


@dataclass
class SegmentRecord:
    id: str
    lang: str
    modality: str  # "speech" | "text"
    audio_uri: Optional[str] = None
    start_ms: Optional[int] = None
    end_ms: Optional[int] = None
    text: Optional[str] = None
    lid_score: Optional[float] = None
    parent_id: Optional[str] = None

    def __post_init__(self):
        if self.modality not in ("speech", "text"):
            raise PolymineError(f"{self.id}: modality must be 'speech' or 'text', got {self.modality!r}")
        if self.modality == "speech":
            if not self.audio_uri:
                raise PolymineError(f"{self.id}: speech record without audio_uri")
            if self.start_ms is not None and self.end_ms is not None:
                if self.start_ms < 0 or self.end_ms <= self.start_ms:
                    raise PolymineError(f"{self.id}: invalid span [{self.start_ms}, {self.end_ms})")
        elif self.text is None:
            raise PolymineError(f"{self.id}: text record without text")
        if self.lid_score is not None and not 0.0 <= self.lid_score <= 1.0:
            raise PolymineError(f"{self.id}: lid_score {self.lid_score} outside [0, 1]")

    @property
    def has_span(self) -> bool:
        return self.start_ms is not None and self.end_ms is not None

    @property
    def duration_s(self) -> Optional[float]:
        if not self.has_span:
            return None
        return (self.end_ms - self.start_ms) / 1000.0

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentRecord":
        return cls(**d)


def read_segments(path) -> list[SegmentRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(SegmentRecord.from_dict(json.loads(line)))
    return records


def write_segments(path, records: Iterable[SegmentRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_id_order(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.rstrip("\n")]


def write_id_order(path, ids: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(i + "\n" for i in ids)


@dataclass(frozen=True)
class EmbeddingStore:
    """Metadata records aligned row-for-row with an embedding matrix."""

    matrix: EmbeddingMatrix
    ids: tuple
    records: tuple
    _rows: dict = field(repr=False, compare=False)

    def __len__(self):
        return len(self.ids)

    def row(self, seg_id: str) -> int:
        return self._rows[seg_id]

    def record(self, seg_id: str) -> SegmentRecord:
        return self.records[self._rows[seg_id]]

    def __contains__(self, seg_id):
        return seg_id in self._rows

    def normalized(self) -> "EmbeddingStore":
        return EmbeddingStore(normalize(self.matrix), self.ids, self.records, self._rows)

    def subset(self, keep_ids: Iterable[str]) -> "EmbeddingStore":
        """Restrict to `keep_ids`, preserving the original row order."""
        keep = set(keep_ids)
        rows = [i for i, sid in enumerate(self.ids) if sid in keep]
        ids = tuple(self.ids[i] for i in rows)
        return EmbeddingStore(
            self.matrix.take(rows), ids, tuple(self.records[i] for i in rows), {s: i for i, s in enumerate(ids)}
        )


def join(meta: Sequence[SegmentRecord], m: EmbeddingMatrix, id_order: Sequence[str]) -> EmbeddingStore:
    if len(id_order) != m.count:
        raise DimMismatch(f"id_order has {len(id_order)} ids but the matrix has {m.count} rows")
    rows = {}
    for i, sid in enumerate(id_order):
        if sid in rows:
            raise DuplicateId(f"id {sid!r} appears twice in id_order (rows {rows[sid]} and {i})")
        rows[sid] = i
    by_id = {}
    for r in meta:
        if r.id in by_id:
            raise DuplicateId(f"id {r.id!r} appears twice in metadata")
        by_id[r.id] = r
    no_row = by_id.keys() - rows.keys()
    if no_row:
        raise MissingEmbedding(no_row)
    no_meta = rows.keys() - by_id.keys()
    if no_meta:
        raise MissingMetadata(no_meta)
    ids = tuple(id_order)
    return EmbeddingStore(m, ids, tuple(by_id[s] for s in ids), rows)


def load_store(embeddings, ids, meta) -> EmbeddingStore:
    return join(read_segments(meta), load_embeddings(embeddings), read_id_order(ids))
