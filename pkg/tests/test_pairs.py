"""Pair manifests: policy handling, stats, serialization determinism."""

import numpy as np
import pytest

from lgsample.errors import ValidationError
from lgsample.knn import NeighborList, topk_exact
from lgsample.pairs import (
    PairRecord,
    build_pairs,
    manifest_stats,
    read_manifest,
    write_manifest,
)

from conftest import random_normalized


def lists(*specs):
    return [
        NeighborList(query_id=q, neighbors=tuple(ns)) for q, ns in specs
    ]


def test_k_keep_one_takes_rank_one_only():
    nls = lists(
        ("a", [("x", 0.9), ("y", 0.8), ("z", 0.7)]),
        ("b", [("y", 0.6), ("z", 0.5), ("x", 0.4)]),
    )
    build = build_pairs(nls, k_keep=1)
    assert [(p.source_id, p.target_id, p.rank) for p in build.pairs] == [
        ("a", "x", 1),
        ("b", "y", 1),
    ]
    assert build.truncated_sources == 0


def test_similarity_floor_above_cosine_range_empties_manifest():
    nls = lists(("a", [("x", 0.99), ("y", 0.98)]))
    build = build_pairs(nls, k_keep=2, min_similarity=1.1)
    assert build.pairs == ()


def test_short_lists_warn_not_fail():
    nls = lists(("a", [("x", 0.9)]), ("b", [("x", 0.8), ("y", 0.7)]))
    build = build_pairs(nls, k_keep=2)
    assert build.truncated_sources == 1
    assert len(build.pairs) == 3


def test_no_self_pairs_even_without_search_exclusion():
    corpus = random_normalized(40, 8, seed=3)
    found = topk_exact(corpus, corpus, k=3, exclude_self=False)
    build = build_pairs(found, k_keep=2)
    assert all(p.source_id != p.target_id for p in build.pairs)
    # rank 1 is the best non-self neighbor
    by_source = {p.source_id: p for p in build.pairs if p.rank == 1}
    reference = {nl.query_id: nl for nl in topk_exact(corpus, corpus, k=1, exclude_self=True)}
    for sid, pair in by_source.items():
        assert pair.target_id == reference[sid].neighbors[0][0]


def test_matches_recomputation_from_search_output():
    corpus = random_normalized(60, 12, seed=11)
    queries = random_normalized(25, 12, seed=12, prefix="q")
    found = topk_exact(corpus, queries, k=5)
    build = build_pairs(found, k_keep=3)
    expected = {
        (nl.query_id, rid, rank + 1, sim)
        for nl in found
        for rank, (rid, sim) in enumerate(nl.neighbors[:3])
    }
    got = {(p.source_id, p.target_id, p.rank, p.similarity) for p in build.pairs}
    assert got == expected


def test_k_keep_one_manifest_size_equals_sources_with_neighbors():
    nls = lists(
        ("a", [("x", 0.9)]),
        ("b", []),  # no neighbors at all
        ("c", [("c", 1.0)]),  # only a self-neighbor
        ("d", [("y", 0.2), ("z", 0.1)]),
    )
    build = build_pairs(nls, k_keep=1)
    with_usable = 2  # a and d
    assert len(build.pairs) == with_usable


def test_scope_annotation():
    nls = lists(("a", [("x", 0.5)]), ("b", [("y", 0.4)]))
    build = build_pairs(nls, scopes={"a": "r/birds"})
    assert build.pairs[0].scope == "r/birds"
    assert build.pairs[1].scope is None


def test_k_keep_validation():
    with pytest.raises(ValidationError, match="k_keep"):
        build_pairs([], k_keep=0)


def test_deterministic_serialization(tmp_path):
    corpus = random_normalized(30, 6, seed=5)
    found = topk_exact(corpus, corpus, k=2, exclude_self=True)
    p1, p2 = tmp_path / "m1.jsonl", tmp_path / "m2.jsonl"
    write_manifest(build_pairs(found, k_keep=2).pairs, p1)
    write_manifest(build_pairs(found, k_keep=2).pairs, p2)
    assert p1.read_bytes() == p2.read_bytes()
    loaded = read_manifest(p1)
    assert len(loaded) == 60
    assert all(isinstance(p, PairRecord) for p in loaded)


# --- stats -------------------------------------------------------------------


def test_stats_empty():
    stats = manifest_stats([])
    assert stats.pair_count == 0
    assert stats.mean_similarity is None


def test_stats_mean():
    pairs = [
        PairRecord("a", "x", 1, 0.4),
        PairRecord("b", "y", 1, 0.6),
    ]
    assert manifest_stats(pairs).mean_similarity == pytest.approx(0.5)


def test_stats_large_matches_independent_sum():
    rng = np.random.default_rng(0)
    sims = rng.uniform(-1, 1, 10_000)
    pairs = [
        PairRecord(f"s{i}", f"t{i}", 1, float(s), "even" if i % 2 == 0 else None)
        for i, s in enumerate(sims)
    ]
    stats = manifest_stats(pairs)
    total = 0.0
    for s in sims:
        total += float(s)
    assert stats.mean_similarity == pytest.approx(total / len(sims), abs=1e-12)
    assert stats.per_scope_counts == {"even": 5000}
    assert stats.unscoped_count == 5000


def test_stats_duplicate_pairs_counted():
    pairs = [
        PairRecord("a", "x", 1, 1.0),
        PairRecord("b", "y", 1, 0.99999999),
        PairRecord("c", "z", 1, 0.5),
    ]
    assert manifest_stats(pairs).duplicate_pairs == 2
