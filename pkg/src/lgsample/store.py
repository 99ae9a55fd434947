"""Binary embedding store (.lgem) and the in-memory embedding matrix.

File layout (all integers little-endian):

    magic "LGEM" | version u32 | n_records u64 | dim u32 | flags u32
    id block:      n_records x (u32 byte length + UTF-8 bytes)
    scope block:   only if flags bit 1 is set:
                   u32 unique-label count, labels as (u32 length + UTF-8),
                   then n_records x u32 label indices
    vector block:  n_records x dim float32, row-major
    trailer:       CRC32 of all preceding bytes, u32

Scope labels are dictionary-coded (unique-label table + per-record index);
the corpora this targets have at most a few thousand distinct scopes.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from typing import BinaryIO, Union

import numpy as np

from .errors import StoreFormatError, ValidationError

MAGIC = b"LGEM"
FORMAT_VERSION = 1
FLAG_NORMALIZED = 1 << 0
FLAG_SCOPED = 1 << 1

_HEADER = struct.Struct("<4sIQII")  # magic, version, n_records, dim, flags
_U32 = struct.Struct("<I")

# Tolerance on stored unit rows; float32 storage of float64-normalized rows
# stays well inside this.
_NORM_SLACK = 1e-4

PathOrFile = Union[str, "os.PathLike[str]", BinaryIO]


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Immutable N x F float32 feature store with unique string ids.

    Rows hold one embedding per record. ``scope_labels``, when present,
    assigns each record to a named partition used for scoped neighbor
    search. ``normalized`` asserts every row has unit L2 norm.
    """

    vectors: np.ndarray
    ids: tuple[str, ...]
    scope_labels: tuple[str, ...] | None = None
    normalized: bool = False

    def __post_init__(self) -> None:
        vec = np.asarray(self.vectors, dtype=np.float32)
        if vec.ndim != 2:
            raise ValidationError(f"vectors must be 2-D, got shape {vec.shape}")
        if vec.shape[0] < 1 or vec.shape[1] < 1:
            raise ValidationError(f"vectors must be non-empty, got shape {vec.shape}")
        vec = np.ascontiguousarray(vec)
        vec.flags.writeable = False
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "ids", tuple(self.ids))
        if self.scope_labels is not None:
            object.__setattr__(self, "scope_labels", tuple(self.scope_labels))
        self._validate()

    def _validate(self) -> None:
        n = self.vectors.shape[0]
        if len(self.ids) != n:
            raise ValidationError(f"ids length {len(self.ids)} != n_records {n}")
        if len(set(self.ids)) != n:
            seen: set[str] = set()
            for rid in self.ids:
                if rid in seen:
                    raise ValidationError(f"duplicate id: {rid!r}")
                seen.add(rid)
        if self.scope_labels is not None and len(self.scope_labels) != n:
            raise ValidationError(
                f"scope_labels length {len(self.scope_labels)} != n_records {n}"
            )
        finite = np.isfinite(self.vectors)
        if not finite.all():
            row, col = np.argwhere(~finite)[0]
            raise ValidationError(f"non-finite value at row {row}, column {col}")
        if self.normalized:
            norms = _row_norms(self.vectors)
            bad = np.abs(norms - 1.0) > _NORM_SLACK
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise ValidationError(
                    f"normalized flag set but row {row} ({self.ids[row]!r}) "
                    f"has norm {norms[row]:.6g}"
                )

    @property
    def n_records(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row_of(self, record_id: str) -> int:
        """Corpus row index of ``record_id`` (builds no index; O(n))."""
        try:
            return self.ids.index(record_id)
        except ValueError:
            raise KeyError(record_id) from None

    def take(self, rows: np.ndarray) -> "EmbeddingMatrix":
        """Sub-matrix over the given row indices, preserving metadata."""
        rows = np.asarray(rows, dtype=np.intp)
        scope = (
            tuple(self.scope_labels[i] for i in rows)
            if self.scope_labels is not None
            else None
        )
        return EmbeddingMatrix(
            vectors=self.vectors[rows],
            ids=tuple(self.ids[i] for i in rows),
            scope_labels=scope,
            normalized=self.normalized,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.scope_labels == other.scope_labels
            and self.normalized == other.normalized
            and self.vectors.shape == other.vectors.shape
            and np.array_equal(
                self.vectors.view(np.uint32), other.vectors.view(np.uint32)
            )
        )


def _row_norms(vectors: np.ndarray) -> np.ndarray:
    """Row L2 norms accumulated in float64."""
    v = vectors.astype(np.float64, copy=False)
    return np.sqrt(np.einsum("ij,ij->i", v, v))


def l2_normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit L2 norm (float64 accumulation).

    Raises on zero rows: a zero embedding has no direction, so its cosine
    similarity is undefined.
    """
    norms = _row_norms(matrix.vectors)
    zero = norms == 0.0
    if zero.any():
        row = int(np.flatnonzero(zero)[0])
        raise ValidationError(f"zero row for record id {matrix.ids[row]!r}")
    scaled = matrix.vectors.astype(np.float64) / norms[:, None]
    return EmbeddingMatrix(
        vectors=scaled.astype(np.float32),
        ids=matrix.ids,
        scope_labels=matrix.scope_labels,
        normalized=True,
    )


def write_store(matrix: EmbeddingMatrix, destination: PathOrFile) -> None:
    """Write ``matrix`` to the binary .lgem layout.

    The output round-trips through :func:`read_store` bit-identically.
    """
    if hasattr(destination, "write"):
        _write_to(matrix, destination)  # type: ignore[arg-type]
    else:
        with open(destination, "wb") as sink:
            _write_to(matrix, sink)


def _write_to(matrix: EmbeddingMatrix, sink: BinaryIO) -> None:
    flags = 0
    if matrix.normalized:
        flags |= FLAG_NORMALIZED
    if matrix.scope_labels is not None:
        flags |= FLAG_SCOPED

    crc = 0

    def emit(chunk: bytes) -> None:
        nonlocal crc
        sink.write(chunk)
        crc = zlib.crc32(chunk, crc)

    emit(_HEADER.pack(MAGIC, FORMAT_VERSION, matrix.n_records, matrix.dim, flags))
    for rid in matrix.ids:
        raw = rid.encode("utf-8")
        emit(_U32.pack(len(raw)) + raw)
    if matrix.scope_labels is not None:
        table: dict[str, int] = {}
        for label in matrix.scope_labels:
            table.setdefault(label, len(table))
        emit(_U32.pack(len(table)))
        for label in table:
            raw = label.encode("utf-8")
            emit(_U32.pack(len(raw)) + raw)
        indices = np.fromiter(
            (table[label] for label in matrix.scope_labels),
            dtype="<u4",
            count=matrix.n_records,
        )
        emit(indices.tobytes())
    # Row-chunked so multi-GB stores never need a second full copy in memory.
    vec = matrix.vectors
    rows_per_chunk = max(1, (1 << 24) // (4 * matrix.dim))
    for start in range(0, matrix.n_records, rows_per_chunk):
        emit(vec[start : start + rows_per_chunk].astype("<f4", copy=False).tobytes())
    sink.write(_U32.pack(crc))


class _Cursor:
    """Bounds-checked reader over an in-memory byte buffer."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def need(self, count: int, what: str) -> None:
        if self.pos + count > len(self.buf):
            raise StoreFormatError(
                f"truncated payload reading {what}: expected at least "
                f"{self.pos + count} bytes, got {len(self.buf)}"
            )

    def take(self, count: int, what: str) -> bytes:
        self.need(count, what)
        out = self.buf[self.pos : self.pos + count]
        self.pos += count
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def text(self, what: str) -> str:
        length = self.u32(f"{what} length")
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StoreFormatError(f"invalid UTF-8 in {what}: {exc}") from None


def read_store(source: PathOrFile) -> EmbeddingMatrix:
    """Parse and validate a .lgem file.

    Rejects bad magic, unsupported versions, truncated or oversized
    payloads, checksum mismatches, non-finite vector entries (reporting
    the offending row/column) and duplicate ids.
    """
    if hasattr(source, "read"):
        buf = source.read()  # type: ignore[union-attr]
    else:
        with open(source, "rb") as fh:
            buf = fh.read()
    return _parse(buf)


def _parse(buf: bytes) -> EmbeddingMatrix:
    cur = _Cursor(buf)
    header = cur.take(_HEADER.size, "header")
    magic, version, n_records, dim, flags = _HEADER.unpack(header)
    if magic != MAGIC:
        raise StoreFormatError(f"bad magic: expected {MAGIC!r}, got {magic!r}")
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"unsupported version {version}")
    if n_records < 1 or dim < 1:
        raise StoreFormatError(f"invalid shape: n_records={n_records}, dim={dim}")

    ids = tuple(cur.text(f"id {i}") for i in range(n_records))

    scope_labels: tuple[str, ...] | None = None
    if flags & FLAG_SCOPED:
        n_labels = cur.u32("scope label count")
        table = tuple(cur.text(f"scope label {i}") for i in range(n_labels))
        raw = cur.take(4 * n_records, "scope indices")
        indices = np.frombuffer(raw, dtype="<u4")
        if n_labels == 0 or indices.max(initial=0) >= n_labels:
            raise StoreFormatError("scope index out of range of the label table")
        scope_labels = tuple(table[i] for i in indices)

    vec_bytes = cur.take(4 * n_records * dim, "vector block")
    expected = cur.pos + 4
    if len(buf) != expected:
        raise StoreFormatError(
            f"trailing bytes after vector block: expected {expected} bytes total, "
            f"got {len(buf)}"
        )
    stored_crc = _U32.unpack(cur.take(4, "checksum"))[0]
    actual_crc = zlib.crc32(buf[:-4])
    if stored_crc != actual_crc:
        raise StoreFormatError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )

    vectors = (
        np.frombuffer(vec_bytes, dtype="<f4").reshape(n_records, dim).copy()
    )
    try:
        return EmbeddingMatrix(
            vectors=vectors,
            ids=ids,
            scope_labels=scope_labels,
            normalized=bool(flags & FLAG_NORMALIZED),
        )
    except ValidationError as exc:
        raise StoreFormatError(str(exc)) from None
