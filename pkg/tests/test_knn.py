"""Exact kNN: oracle equivalence, determinism, scoping, memory bank."""

import numpy as np
import pytest

from lgsample.errors import ValidationError
from lgsample.knn import (
    MemoryBank,
    NeighborList,
    memory_bank_nn,
    read_neighbors,
    topk_exact,
    topk_scoped,
    write_neighbors,
)
from lgsample.store import EmbeddingMatrix, l2_normalize

from _oracles import naive_topk
from conftest import random_normalized


def as_pairs(neighbor_lists):
    return [[(rid, sim) for rid, sim in nl.neighbors] for nl in neighbor_lists]


def assert_matches_oracle(got, expected, sim_tol=1e-6):
    assert len(got) == len(expected)
    for g, e in zip(as_pairs(got), expected):
        assert [rid for rid, _ in g] == [rid for rid, _ in e]
        for (_, gs), (_, es) in zip(g, e):
            assert abs(gs - es) <= sim_tol


def test_exact_copy_is_rank_one():
    base = random_normalized(10, 8, seed=1)
    vec = np.vstack([base.vectors, base.vectors[3:4]])
    corpus = EmbeddingMatrix(
        vec, ids=base.ids + ("copy-of-3",), normalized=True
    )
    queries = corpus.take(np.array([3]))
    [result] = topk_exact(corpus, queries, k=1, exclude_self=True)
    assert result.neighbors[0][0] == "copy-of-3"
    assert abs(result.neighbors[0][1] - 1.0) <= 1e-6


def test_analytic_angles():
    angles = np.deg2rad([0.0, 30.0, 90.0, 180.0])
    vec = np.stack([np.cos(angles), np.sin(angles)], axis=1).astype(np.float32)
    corpus = EmbeddingMatrix(vec, ids=("a0", "a30", "a90", "a180"), normalized=True)
    queries = corpus.take(np.array([0]))
    [result] = topk_exact(corpus, queries, k=2)
    assert [rid for rid, _ in result.neighbors] == ["a0", "a30"]
    np.testing.assert_allclose(
        [sim for _, sim in result.neighbors],
        [1.0, np.cos(np.deg2rad(30.0))],
        atol=1e-6,
    )


@pytest.mark.parametrize("k", [1, 3, 10])
def test_random_matches_naive_oracle(k):
    corpus = random_normalized(200, 16, seed=42)
    queries = random_normalized(37, 16, seed=43, prefix="q")
    got = topk_exact(corpus, queries, k=k)
    expected = naive_topk(
        corpus.vectors, list(corpus.ids), queries.vectors, list(queries.ids), k
    )
    assert_matches_oracle(got, expected)


def test_self_exclusion_matches_oracle():
    corpus = random_normalized(120, 8, seed=9)
    got = topk_exact(corpus, corpus, k=4, exclude_self=True)
    expected = naive_topk(
        corpus.vectors, list(corpus.ids), corpus.vectors, list(corpus.ids), 4,
        exclude_self=True,
    )
    assert_matches_oracle(got, expected)


def test_duplicate_vectors_tie_break_by_corpus_row():
    row = np.array([[1.0, 0.0]], dtype=np.float32)
    vec = np.vstack([row, row, row, [[0.0, 1.0]]])
    corpus = EmbeddingMatrix(vec, ids=("d0", "d1", "d2", "other"), normalized=True)
    [result] = topk_exact(corpus, corpus.take(np.array([2])), k=2)
    assert [rid for rid, _ in result.neighbors] == ["d0", "d1"]


def test_block_and_thread_invariance():
    corpus = random_normalized(1000, 24, seed=7)
    queries = random_normalized(257, 24, seed=8, prefix="q")
    reference = topk_exact(corpus, queries, k=5, block_size=4096, n_threads=1)
    for block_size in (64, 256, 4096):
        for n_threads in (1, None):
            got = topk_exact(
                corpus, queries, k=5, block_size=block_size, n_threads=n_threads
            )
            assert got == reference  # bit-identical, dataclass equality


def test_similarities_stay_in_cosine_range():
    corpus = random_normalized(300, 48, seed=19)
    for nl in topk_exact(corpus, corpus, k=5, exclude_self=True):
        for _, sim in nl.neighbors:
            assert -1.0 - 1e-6 <= sim <= 1.0 + 1e-6


def test_prefix_monotonicity():
    corpus = random_normalized(150, 12, seed=13)
    queries = random_normalized(20, 12, seed=14, prefix="q")
    big = topk_exact(corpus, queries, k=10)
    for k_small in (1, 3, 7):
        small = topk_exact(corpus, queries, k=k_small)
        for s, b in zip(small, big):
            assert s.neighbors == b.neighbors[:k_small]


def test_validation_errors():
    corpus = random_normalized(10, 4, seed=0)
    queries = random_normalized(3, 5, seed=1, prefix="q")
    raw = EmbeddingMatrix(corpus.vectors * 2.0, ids=corpus.ids)
    with pytest.raises(ValidationError, match="dimension mismatch"):
        topk_exact(corpus, queries, k=1)
    with pytest.raises(ValidationError, match="not normalized"):
        topk_exact(raw, corpus.take(np.arange(2)), k=1)
    with pytest.raises(ValidationError, match="k must be"):
        topk_exact(corpus, corpus, k=0)
    with pytest.raises(ValidationError, match="k out of range"):
        topk_exact(corpus, corpus, k=10, exclude_self=True)
    with pytest.raises(ValidationError, match="k out of range"):
        topk_exact(corpus, corpus, k=11)


# --- scoped search ----------------------------------------------------------


def test_single_scope_equals_global():
    corpus = random_normalized(
        80, 8, seed=21, scopes=tuple("all" for _ in range(80))
    )
    scoped = topk_scoped(corpus, k=3)
    global_ = topk_exact(corpus, corpus, k=3, exclude_self=True)
    assert scoped == global_


def test_orthogonal_scopes_stay_contained():
    rng = np.random.default_rng(3)
    a = np.zeros((30, 8), dtype=np.float32)
    b = np.zeros((30, 8), dtype=np.float32)
    a[:, :4] = rng.standard_normal((30, 4))
    b[:, 4:] = rng.standard_normal((30, 4))
    corpus = l2_normalize(
        EmbeddingMatrix(
            np.vstack([a, b]),
            ids=tuple(f"r{i}" for i in range(60)),
            scope_labels=tuple(["A"] * 30 + ["B"] * 30),
        )
    )
    for row, nl in enumerate(topk_scoped(corpus, k=4)):
        want = corpus.scope_labels[row]
        for rid, _ in nl.neighbors:
            assert corpus.scope_labels[corpus.ids.index(rid)] == want


def test_four_scopes_match_per_partition_search():
    n = 200
    scopes = tuple(f"year-{i % 4}" for i in range(n))
    corpus = random_normalized(n, 16, seed=33, scopes=scopes)
    scoped = topk_scoped(corpus, k=3)
    by_row = {nl.query_id: nl for nl in scoped}
    for label in sorted(set(scopes)):
        rows = np.array([i for i, s in enumerate(scopes) if s == label])
        sub = corpus.take(rows)
        independent = topk_exact(sub, sub, k=3, exclude_self=True)
        for nl in independent:
            assert by_row[nl.query_id] == nl


def test_scoped_validation():
    corpus = random_normalized(10, 4, seed=5)
    with pytest.raises(ValidationError, match="no scope labels"):
        topk_scoped(corpus, k=1)
    lonely = random_normalized(
        3, 4, seed=6, scopes=("a", "a", "lonely-scope")
    )
    with pytest.raises(ValidationError, match="lonely-scope"):
        topk_scoped(lonely, k=1)


def test_scoped_small_partition_clamps_k():
    corpus = random_normalized(5, 4, seed=10, scopes=("a", "a", "b", "b", "b"))
    results = topk_scoped(corpus, k=4)
    lengths = {nl.query_id: len(nl.neighbors) for nl in results}
    assert lengths == {"r0": 1, "r1": 1, "r2": 2, "r3": 2, "r4": 2}


# --- memory bank ------------------------------------------------------------


def test_bank_single_entry_always_returned():
    bank = MemoryBank(capacity=4, dim=3)
    bank.push(["only"], np.array([[0.0, 0.0, 2.0]]))
    rid, sim = memory_bank_nn(bank, np.array([1.0, 0.0, 0.0]))
    assert rid == "only"
    assert abs(sim) < 1e-12


def test_bank_fifo_eviction():
    rng = np.random.default_rng(0)
    bank = MemoryBank(capacity=4, dim=6)
    query = rng.standard_normal(6)
    query /= np.linalg.norm(query)
    bank.push(["best"], query[None, :].copy())  # global best for `query`
    others = rng.standard_normal((4, 6))
    others -= (others @ query)[:, None] * query  # orthogonal: sim ~ 0
    bank.push([f"o{i}" for i in range(4)], others)
    rid, _ = bank.nearest(query)
    assert rid != "best"  # evicted despite being the best match
    assert len(bank) == 4


def test_bank_matches_linear_scan():
    rng = np.random.default_rng(17)
    vectors = rng.standard_normal((1000, 12))
    bank = MemoryBank(capacity=1000, dim=12)
    bank.push([f"b{i}" for i in range(1000)], vectors)
    for qseed in range(5):
        q = np.random.default_rng(qseed).standard_normal(12)
        unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
        sims = unit @ (q / np.linalg.norm(q))
        rid, sim = bank.nearest(q)
        assert rid == f"b{int(np.argmax(sims))}"
        assert abs(sim - sims.max()) < 1e-12


def test_bank_validation():
    bank = MemoryBank(capacity=2, dim=3)
    with pytest.raises(ValidationError, match="empty"):
        bank.nearest(np.ones(3))
    with pytest.raises(ValidationError, match="zero vector"):
        bank.push(["z"], np.zeros((1, 3)))


# --- JSONL round-trip -------------------------------------------------------


def test_neighbors_jsonl_roundtrip(tmp_path):
    corpus = random_normalized(30, 6, seed=2)
    results = topk_exact(corpus, corpus, k=3, exclude_self=True)
    path = tmp_path / "nn.jsonl"
    write_neighbors(results, path)
    loaded = read_neighbors(path)
    assert [nl.query_id for nl in loaded] == [nl.query_id for nl in results]
    for orig, got in zip(results, loaded):
        for (oid, osim), (gid, gsim) in zip(orig.neighbors, got.neighbors):
            assert oid == gid
            assert abs(osim - gsim) <= 5e-7  # 6-decimal serialization

    first = path.read_text(encoding="utf-8").splitlines()[0]
    assert '"query"' in first and '"sim"' in first


def test_neighbors_jsonl_rejects_garbage(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"query": "a"}\n', encoding="utf-8")
    with pytest.raises(ValidationError, match="line 1"):
        read_neighbors(path)
