"""Exact top-k cosine nearest-neighbor search over normalized embeddings.

The kernel is a blocked matrix product: query blocks against corpus chunks,
with a per-query bounded candidate set merged across chunks. Ordering is a
total order (similarity descending, corpus row ascending), which makes
results independent of block size and thread schedule.

Similarities are accumulated in float64 and every GEMM operand is shaped to
a multiple of 64 rows (ragged tails are zero-padded): the BLAS backends this
runs on pick different edge micro-kernels for small or odd shapes, and those
produce different low-order bits for the same dot product. The shape
discipline keeps every (query, corpus) product bit-identical regardless of
blocking, which the block/thread invariance contract requires.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .store import EmbeddingMatrix

_GEMM_ALIGN = 64
_CORPUS_CHUNK_FLOOR = 4096  # small corpus chunks degrade into thousands of tiny GEMMs


@dataclass(frozen=True)
class NeighborList:
    """Top-k neighbors of one query: (record id, cosine similarity) pairs,
    sorted by similarity descending with ties broken by corpus row order."""

    query_id: str
    neighbors: tuple[tuple[str, float], ...]


def _round_up(n: int, align: int = _GEMM_ALIGN) -> int:
    return ((n + align - 1) // align) * align


def _padded(block: np.ndarray) -> np.ndarray:
    rows = block.shape[0]
    target = _round_up(rows)
    if rows == target:
        return block
    out = np.zeros((target, block.shape[1]), dtype=block.dtype)
    out[:rows] = block
    return out


def _check_normalized(matrix: EmbeddingMatrix, name: str) -> None:
    if not matrix.normalized:
        raise ValidationError(f"{name} is not normalized; run l2_normalize first")


def _select_topk_row(
    sims: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k of one similarity row under (sim desc, index asc)."""
    n = sims.shape[0]
    kk = min(k, n)
    if kk == n:
        chosen = np.arange(n)
    else:
        part = np.argpartition(sims, n - kk)[n - kk :]
        thr = sims[part].min()
        above = np.flatnonzero(sims > thr)
        if above.shape[0] + np.count_nonzero(sims == thr) == kk:
            chosen = part
        else:
            at = np.flatnonzero(sims == thr)[: kk - above.shape[0]]
            chosen = np.concatenate([above, at])
    order = np.lexsort((chosen, -sims[chosen]))
    chosen = chosen[order]
    return chosen, sims[chosen]


def _block_topk(sims: np.ndarray, base: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row exact top-k of a similarity block, vectorized.

    Rows are ordered by (sim desc, global index asc). Exact float ties that
    span the selection boundary (argpartition picks an arbitrary tied
    subset) are rare and re-resolved row by row.
    """
    n_rows, n_cols = sims.shape
    kk = min(k, n_cols)
    if kk == n_cols:
        part = np.broadcast_to(np.arange(n_cols), (n_rows, n_cols)).copy()
    else:
        part = np.argpartition(sims, n_cols - kk, axis=1)[:, n_cols - kk :]
    part.sort(axis=1)  # ascending column index, so the stable sort below
    psims = np.take_along_axis(sims, part, axis=1)  # keeps ties index-ordered
    order = np.argsort(-psims, axis=1, kind="stable")
    idx = np.take_along_axis(part, order, axis=1)
    sim = np.take_along_axis(psims, order, axis=1)
    if kk < n_cols:
        thr = sim[:, -1]
        ambiguous = np.flatnonzero((sims >= thr[:, None]).sum(axis=1) > kk)
        for row in ambiguous:
            chosen, chosen_sims = _select_topk_row(sims[row], k)
            idx[row] = chosen
            sim[row] = chosen_sims
    return idx + base, sim


def _merge_topk(
    idx_parts: list[np.ndarray], sim_parts: list[np.ndarray], k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Merge per-chunk candidates (q, kk_i) into per-row top-k.

    Chunks arrive in ascending global-index order and each chunk's columns
    are already (sim desc, index asc), so a stable sort on similarity alone
    preserves the ascending-index tie rule.
    """
    idx = np.concatenate(idx_parts, axis=1)
    sim = np.concatenate(sim_parts, axis=1)
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(idx, order, axis=1), np.take_along_axis(
        sim, order, axis=1
    )


def topk_exact(
    corpus: EmbeddingMatrix,
    queries: EmbeddingMatrix,
    k: int,
    exclude_self: bool = False,
    block_size: int = 4096,
    n_threads: int | None = None,
) -> list[NeighborList]:
    """Exact top-k cosine neighbors of every query over the whole corpus.

    Both matrices must be normalized (cosine == dot product). With
    ``exclude_self`` a corpus record whose id equals the query id is never
    returned; queries may be any subset of the corpus in any order.
    Results are deterministic: ties break toward the lower corpus row, and
    the output is bit-identical for any block size or thread count.
    """
    _check_normalized(corpus, "corpus")
    _check_normalized(queries, "queries")
    if corpus.dim != queries.dim:
        raise ValidationError(
            f"dimension mismatch: corpus dim {corpus.dim}, queries dim {queries.dim}"
        )
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    limit = corpus.n_records - 1 if exclude_self else corpus.n_records
    if k > limit:
        raise ValidationError(
            f"k out of range: k={k} but corpus has {corpus.n_records} records"
            + (" (self-exclusion on)" if exclude_self else "")
        )

    corpus64 = corpus.vectors.astype(np.float64)
    queries64 = corpus64 if queries is corpus else queries.vectors.astype(np.float64)
    exclude_rows: dict[int, int] = {}
    if exclude_self:
        row_by_id = {rid: row for row, rid in enumerate(corpus.ids)}
        for qrow, qid in enumerate(queries.ids):
            crow = row_by_id.get(qid)
            if crow is not None:
                exclude_rows[qrow] = crow

    qblock = _round_up(max(block_size, _GEMM_ALIGN))
    cchunk = _round_up(max(block_size, _CORPUS_CHUNK_FLOOR))
    n_q = queries.n_records
    n_c = corpus.n_records

    results: list[list[NeighborList] | None] = [None] * _ceil_div(n_q, qblock)

    def run_block(bi: int) -> None:
        q0 = bi * qblock
        q1 = min(q0 + qblock, n_q)
        qpad = _padded(queries64[q0:q1])
        idx_parts: list[np.ndarray] = []
        sim_parts: list[np.ndarray] = []
        for c0 in range(0, n_c, cchunk):
            c1 = min(c0 + cchunk, n_c)
            cpad = _padded(corpus64[c0:c1])
            sims = np.ascontiguousarray((qpad @ cpad.T)[: q1 - q0, : c1 - c0])
            for qrow, crow in exclude_rows.items():
                if q0 <= qrow < q1 and c0 <= crow < c1:
                    sims[qrow - q0, crow - c0] = -np.inf
            idx, sim = _block_topk(sims, c0, k)
            idx_parts.append(idx)
            sim_parts.append(sim)
        idx, sim = _merge_topk(idx_parts, sim_parts, k)
        block_out = []
        for local in range(q1 - q0):
            row_idx = idx[local]
            row_sim = sim[local]
            keep = row_sim != -np.inf
            block_out.append(
                NeighborList(
                    query_id=queries.ids[q0 + local],
                    neighbors=tuple(
                        (corpus.ids[i], float(s))
                        for i, s in zip(row_idx[keep], row_sim[keep])
                    ),
                )
            )
        results[bi] = block_out

    _run_parallel(run_block, len(results), n_threads)
    out: list[NeighborList] = []
    for block in results:
        assert block is not None
        out.extend(block)
    return out


def topk_scoped(
    corpus: EmbeddingMatrix,
    k: int,
    block_size: int = 4096,
    n_threads: int | None = None,
) -> list[NeighborList]:
    """Per-record top-k restricted to records sharing the scope label.

    Self-exclusion is always on. Partitions are searched independently; a
    partition smaller than k+1 yields shorter neighbor lists. Output is in
    corpus row order.
    """
    _check_normalized(corpus, "corpus")
    if corpus.scope_labels is None:
        raise ValidationError("corpus has no scope labels; scoped search needs them")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")

    partitions: dict[str, list[int]] = {}
    for row, label in enumerate(corpus.scope_labels):
        partitions.setdefault(label, []).append(row)
    for label, rows in partitions.items():
        if len(rows) < 2:
            raise ValidationError(
                f"scope {label!r} has a single record; scoped search needs >= 2"
            )

    out: list[NeighborList | None] = [None] * corpus.n_records
    for label, rows in partitions.items():
        sub = corpus.take(np.asarray(rows, dtype=np.intp))
        found = topk_exact(
            sub,
            sub,
            k=min(k, sub.n_records - 1),
            exclude_self=True,
            block_size=block_size,
            n_threads=n_threads,
        )
        for row, neighbors in zip(rows, found):
            out[row] = neighbors
    return [nl for nl in out if nl is not None]


class MemoryBank:
    """FIFO feature queue with cosine retrieval (NNCLR-style memory bank).

    Rows pushed beyond ``capacity`` evict the oldest entries. Vectors are
    L2-normalized at push time so retrieval is a dot product.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValidationError(f"capacity must be >= 1, got {capacity}")
        if dim < 1:
            raise ValidationError(f"dim must be >= 1, got {dim}")
        self.capacity = capacity
        self.dim = dim
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._ids)

    def push(self, ids: Sequence[str], vectors: np.ndarray) -> None:
        """Append rows, evicting the oldest beyond capacity."""
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ValidationError(
                f"expected vectors of shape (n, {self.dim}), got {vectors.shape}"
            )
        if len(ids) != vectors.shape[0]:
            raise ValidationError("ids and vectors disagree on record count")
        norms = np.sqrt(np.einsum("ij,ij->i", vectors, vectors))
        if (norms == 0.0).any():
            bad = int(np.flatnonzero(norms == 0.0)[0])
            raise ValidationError(f"zero vector for pushed id {ids[bad]!r}")
        for rid, row, norm in zip(ids, vectors, norms):
            self._ids.append(rid)
            self._rows.append(row / norm)
        overflow = len(self._ids) - self.capacity
        if overflow > 0:
            del self._ids[:overflow]
            del self._rows[:overflow]

    def nearest(self, query: np.ndarray) -> tuple[str, float]:
        """Bank entry with maximal cosine to ``query`` (ties: oldest entry)."""
        if not self._ids:
            raise ValidationError("memory bank is empty")
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dim:
            raise ValidationError(
                f"query dim {q.shape[0]} does not match bank dim {self.dim}"
            )
        norm = float(np.sqrt(q @ q))
        if norm == 0.0:
            raise ValidationError("zero query vector")
        sims = np.stack(self._rows) @ (q / norm)
        best = int(np.argmax(sims))  # first max == oldest among ties
        return self._ids[best], float(sims[best])


def memory_bank_nn(bank: MemoryBank, query_vector: np.ndarray) -> tuple[str, float]:
    """Functional wrapper over :meth:`MemoryBank.nearest`."""
    return bank.nearest(query_vector)


# --- JSONL serialization ----------------------------------------------------


def write_neighbors(neighbor_lists: Iterable[NeighborList], path) -> None:
    """One JSON object per query; similarities at 6 decimal places."""
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        for nl in neighbor_lists:
            obj = {
                "query": nl.query_id,
                "neighbors": [
                    {"id": rid, "sim": round(sim, 6)} for rid, sim in nl.neighbors
                ],
            }
            out.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_neighbors(path) -> list[NeighborList]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(
                    NeighborList(
                        query_id=obj["query"],
                        neighbors=tuple(
                            (n["id"], float(n["sim"])) for n in obj["neighbors"]
                        ),
                    )
                )
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValidationError(
                    f"malformed neighbor record at line {lineno}: {exc}"
                ) from None
    return out


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _run_parallel(fn, n_items: int, n_threads: int | None) -> None:
    workers = n_threads if n_threads is not None else (os.cpu_count() or 1)
    if workers <= 1 or n_items <= 1:
        for i in range(n_items):
            fn(i)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(fn, range(n_items)))
