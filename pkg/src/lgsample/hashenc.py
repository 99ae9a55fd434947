"""Deterministic hash-based text encoder for demos and end-to-end tests.

Each token maps to a fixed pseudo-random unit direction derived from its
SHA-256 digest, and a caption embeds as the L2-normalized mean of its token
vectors. Captions sharing most tokens land close together, so same-concept
captions built from shared templates resolve to each other under cosine
search. No model assets, no RNG state: the mapping is a pure function of
the bytes, stable across platforms and library versions.
"""

from __future__ import annotations

import hashlib
import re
import struct
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .store import EmbeddingMatrix, l2_normalize

_TOKEN_RE = re.compile(r"[a-z0-9']+")
DEFAULT_DIM = 64


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; empty input yields a single empty token so
    blank captions still embed (aligned with their record id)."""
    tokens = _TOKEN_RE.findall(text.lower())
    return tokens if tokens else [""]


def token_vector(token: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Unit vector for one token, derived from SHA-256 in counter mode."""
    if dim < 1:
        raise ValidationError(f"dim must be >= 1, got {dim}")
    raw = token.encode("utf-8")
    values = np.empty(dim, dtype=np.float64)
    filled = 0
    counter = 0
    while filled < dim:
        digest = hashlib.sha256(raw + b"\x00" + struct.pack("<Q", counter)).digest()
        for off in range(0, 32, 8):
            if filled == dim:
                break
            (word,) = struct.unpack_from("<Q", digest, off)
            values[filled] = word / float(1 << 63) - 1.0  # [-1, 1)
            filled += 1
        counter += 1
    norm = float(np.sqrt(values @ values))
    if norm == 0.0:  # all-zero digest words: not reachable in practice
        values[0] = 1.0
        norm = 1.0
    return values / norm


def encode_texts(texts: Sequence[str], dim: int = DEFAULT_DIM) -> np.ndarray:
    """Mean-of-token-vectors embedding per text, L2-normalized, float32."""
    cache: dict[str, np.ndarray] = {}
    out = np.empty((len(texts), dim), dtype=np.float64)
    for row, text in enumerate(texts):
        tokens = tokenize(text)
        acc = np.zeros(dim, dtype=np.float64)
        for token in tokens:
            vec = cache.get(token)
            if vec is None:
                vec = token_vector(token, dim)
                cache[token] = vec
            acc += vec
        acc /= len(tokens)
        norm = float(np.sqrt(acc @ acc))
        if norm == 0.0:
            # Opposite token vectors cancelling exactly; fall back to the
            # first token's direction to keep the row usable.
            acc = cache[tokens[0]].copy()
            norm = 1.0
        out[row] = acc / norm
    return out.astype(np.float32)


def encode_captions(
    records: Iterable[tuple[str, str, str | None]], dim: int = DEFAULT_DIM
) -> EmbeddingMatrix:
    """Embed (id, text, scope) records into a normalized matrix."""
    rows = list(records)
    if not rows:
        raise ValidationError("no caption records to encode")
    ids = tuple(rid for rid, _, _ in rows)
    scopes = tuple(scope for _, _, scope in rows)
    scope_labels = scopes if any(s is not None for s in scopes) else None
    if scope_labels is not None and any(s is None for s in scope_labels):
        raise ValidationError("either all records carry a scope or none do")
    vectors = encode_texts([text for _, text, _ in rows], dim)
    return l2_normalize(
        EmbeddingMatrix(vectors, ids=ids, scope_labels=scope_labels)
    )
