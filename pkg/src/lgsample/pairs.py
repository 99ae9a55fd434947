"""Positive-pair manifests built from caption-space neighbor lists.

Training consumes the single nearest neighbor per source (k_keep=1);
larger k_keep is for inspection. A similarity floor is available because
vague captions produce unrelated neighbors; by default nothing is dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .knn import NeighborList

# Pairs at or above this similarity are surfaced as likely duplicate captions.
DUPLICATE_SIM = 1.0 - 1e-6


@dataclass(frozen=True)
class PairRecord:
    """One directed positive pair: source record and its sampled neighbor."""

    source_id: str
    target_id: str
    rank: int  # 1-based, within the source's emitted neighbors
    similarity: float
    scope: str | None = None


@dataclass(frozen=True)
class PairBuild:
    pairs: tuple[PairRecord, ...]
    truncated_sources: int  # sources with fewer than k_keep neighbors


@dataclass(frozen=True)
class ManifestStats:
    pair_count: int
    mean_similarity: float | None
    per_scope_counts: dict[str, int]
    unscoped_count: int
    duplicate_pairs: int

    def to_json_dict(self) -> dict:
        return {
            "pair_count": self.pair_count,
            "mean_similarity": self.mean_similarity,
            "per_scope_counts": self.per_scope_counts,
            "unscoped_count": self.unscoped_count,
            "duplicate_pairs": self.duplicate_pairs,
        }


def build_pairs(
    neighbors: Sequence[NeighborList],
    k_keep: int = 1,
    min_similarity: float | None = None,
    scopes: Mapping[str, str] | None = None,
) -> PairBuild:
    """Emit the top ``k_keep`` neighbors of every source as directed pairs.

    Self-neighbors are filtered before ranking, pairs below
    ``min_similarity`` are dropped, and sources with fewer than ``k_keep``
    usable neighbors are emitted short and counted, not failed. Output
    order is deterministic: source order, then rank.
    """
    if k_keep < 1:
        raise ValidationError(f"k_keep must be >= 1, got {k_keep}")
    pairs: list[PairRecord] = []
    truncated = 0
    for nl in neighbors:
        usable = [(rid, sim) for rid, sim in nl.neighbors if rid != nl.query_id]
        if len(usable) < k_keep:
            truncated += 1
        scope = scopes.get(nl.query_id) if scopes is not None else None
        for rank, (rid, sim) in enumerate(usable[:k_keep], start=1):
            if min_similarity is not None and sim < min_similarity:
                break  # similarities are non-increasing in rank
            pairs.append(
                PairRecord(
                    source_id=nl.query_id,
                    target_id=rid,
                    rank=rank,
                    similarity=sim,
                    scope=scope,
                )
            )
    return PairBuild(pairs=tuple(pairs), truncated_sources=truncated)


def manifest_stats(pairs: Sequence[PairRecord]) -> ManifestStats:
    """Exact counts; mean similarity accumulated in float64."""
    per_scope: dict[str, int] = {}
    unscoped = 0
    duplicates = 0
    for p in pairs:
        if p.scope is None:
            unscoped += 1
        else:
            per_scope[p.scope] = per_scope.get(p.scope, 0) + 1
        if p.similarity >= DUPLICATE_SIM:
            duplicates += 1
    mean = (
        float(np.mean(np.array([p.similarity for p in pairs], dtype=np.float64)))
        if pairs
        else None
    )
    return ManifestStats(
        pair_count=len(pairs),
        mean_similarity=mean,
        per_scope_counts=per_scope,
        unscoped_count=unscoped,
        duplicate_pairs=duplicates,
    )


def write_manifest(pairs: Iterable[PairRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        for p in pairs:
            out.write(
                json.dumps(
                    {
                        "src": p.source_id,
                        "tgt": p.target_id,
                        "rank": p.rank,
                        "sim": round(p.similarity, 6),
                        "scope": p.scope,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_manifest(path) -> list[PairRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(
                    PairRecord(
                        source_id=obj["src"],
                        target_id=obj["tgt"],
                        rank=int(obj["rank"]),
                        similarity=float(obj["sim"]),
                        scope=obj["scope"],
                    )
                )
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValidationError(
                    f"malformed pair record at line {lineno}: {exc}"
                ) from None
    return out
