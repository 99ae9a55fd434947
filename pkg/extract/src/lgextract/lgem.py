"""Writer for the .lgem embedding store wire format.

Implemented against the documented byte layout so this package
interoperates with any .lgem consumer at the file level:

    "LGEM" | version u32 (=1) | n_records u64 | dim u32 | flags u32
    ids as (u32 length + UTF-8) per record
    optional scope block (u32 label count, labels length-prefixed,
    n_records u32 indices) when flags bit 1 is set
    vectors as n_records x dim float32 LE, row-major
    CRC32 of all preceding bytes (u32)

Flag bit 0 marks L2-normalized rows.
"""

from __future__ import annotations

import struct
import zlib
from typing import Sequence

import numpy as np

MAGIC = b"LGEM"
FORMAT_VERSION = 1
FLAG_NORMALIZED = 1 << 0
FLAG_SCOPED = 1 << 1

_HEADER = struct.Struct("<4sIQII")
_U32 = struct.Struct("<I")


def write_lgem(
    path,
    ids: Sequence[str],
    vectors: np.ndarray,
    scopes: Sequence[str] | None = None,
    normalized: bool = False,
) -> None:
    vec = np.ascontiguousarray(np.asarray(vectors, dtype="<f4"))
    if vec.ndim != 2 or vec.shape[0] != len(ids):
        raise ValueError(
            f"vectors must be 2-D with one row per id, got {vec.shape} "
            f"for {len(ids)} ids"
        )
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate id in record set")
    if scopes is not None and len(scopes) != len(ids):
        raise ValueError("scopes must align with ids")

    flags = (FLAG_NORMALIZED if normalized else 0) | (
        FLAG_SCOPED if scopes is not None else 0
    )
    crc = 0
    with open(path, "wb") as sink:

        def emit(chunk: bytes) -> None:
            nonlocal crc
            sink.write(chunk)
            crc = zlib.crc32(chunk, crc)

        emit(_HEADER.pack(MAGIC, FORMAT_VERSION, vec.shape[0], vec.shape[1], flags))
        for rid in ids:
            raw = rid.encode("utf-8")
            emit(_U32.pack(len(raw)) + raw)
        if scopes is not None:
            table: dict[str, int] = {}
            for label in scopes:
                table.setdefault(label, len(table))
            emit(_U32.pack(len(table)))
            for label in table:
                raw = label.encode("utf-8")
                emit(_U32.pack(len(raw)) + raw)
            emit(
                np.fromiter(
                    (table[s] for s in scopes), dtype="<u4", count=len(ids)
                ).tobytes()
            )
        emit(vec.tobytes())
        sink.write(_U32.pack(crc))
