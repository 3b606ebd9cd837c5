import numpy as np
import pytest

from iclct.errors import ContractError, DegenerateEmbeddingError, EmptyContextError
from iclct.retrieval import (
    assemble_context,
    build_index,
    chunked_inference_plan,
    encoder_hash,
    knn,
    knn_batch,
    load_neighbor_cache,
    save_neighbor_cache,
)

from helpers import brute_force_topk


def random_index(rng, n=200, d=8):
    vecs = rng.normal(size=(n, d))
    return build_index(vecs, np.arange(n)), vecs


def test_stored_vectors_are_unit_norm(rng):
    index, _ = random_index(rng)
    assert np.all(np.abs(np.linalg.norm(index.vectors, axis=1) - 1.0) <= 1e-12)


def test_self_query_similarity_one(rng):
    index, vecs = random_index(rng)
    for i in (0, 57, 199):
        hits = knn(index, vecs[i], 1)
        assert hits[0][0] == i
        assert abs(hits[0][1] - 1.0) <= 1e-12


def test_orthogonal_pair_similarity_zero():
    index = build_index(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1])
    hits = knn(index, np.array([1.0, 0.0]), 2)
    assert hits == [(0, 1.0), (1, 0.0)]


def test_zero_norm_embedding_rejected():
    with pytest.raises(DegenerateEmbeddingError):
        build_index(np.array([[1.0, 0.0], [0.0, 0.0]]), [0, 1])


def test_k_equal_index_size_full_ranking(rng):
    index, vecs = random_index(rng, n=30)
    q = rng.normal(size=8)
    hits = knn(index, q, 30)
    assert len(hits) == 30
    sims = [s for _, s in hits]
    assert sims == sorted(sims, reverse=True)


def test_k_larger_than_index_returns_all(rng):
    index, _ = random_index(rng, n=5)
    assert len(knn(index, np.ones(8), 50)) == 5


def test_duplicate_vectors_tie_broken_by_ascending_id(rng):
    base = rng.normal(size=8)
    vecs = rng.normal(size=(10, 8))
    vecs[7] = base
    vecs[3] = base  # duplicate, lower id
    index = build_index(vecs, np.arange(10))
    hits = knn(index, base, 2)
    assert [h[0] for h in hits] == [3, 7]


def test_knn_matches_brute_force_oracle():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 400))
        vecs = rng.normal(size=(n, 6))
        ids = rng.permutation(n)  # non-trivial id order
        index = build_index(vecs, ids)
        normalized = index.vectors
        for _ in range(4):
            q = rng.normal(size=6)
            k = int(rng.integers(1, n + 1))
            got = knn(index, q, k)
            want = brute_force_topk(normalized, ids, q / np.linalg.norm(q), k)
            assert [g[0] for g in got] == [w[0] for w in want]
            assert np.allclose([g[1] for g in got], [w[1] for w in want], atol=0)


def test_knn_batch_agrees_with_single_queries(rng):
    index, vecs = random_index(rng, n=100)
    queries = rng.normal(size=(7, 8))
    batched = knn_batch(index, queries, 5)
    for q, (ids, sims) in zip(queries, batched):
        single = knn(index, q, 5)
        assert list(ids) == [s[0] for s in single]


def test_assemble_context_single_target(rng):
    index, vecs = random_index(rng, n=50)
    q = rng.normal(size=8)
    asm = assemble_context(index, q[None, :], k=3, c=10)
    want = [h[0] for h in knn(index, q, 3)]
    assert sorted(asm.selected_ids.tolist()) == sorted(want)
    assert np.all(np.diff(asm.selected_scores) <= 0)


def test_assemble_context_identical_targets_share_pool(rng):
    index, _ = random_index(rng, n=60)
    q = rng.normal(size=8)
    asm = assemble_context(index, np.tile(q, (5, 1)), k=4, c=100)
    assert asm.pool_size <= 4


def test_assemble_context_counting_bound(rng):
    index, _ = random_index(rng, n=500)
    targets = rng.normal(size=(20, 8))
    asm = assemble_context(index, targets, k=16, c=100)
    assert asm.pool_size <= 20 * 16
    assert len(asm.selected_ids) <= 100
    assert len(np.unique(asm.selected_ids)) == len(asm.selected_ids)


def test_assemble_context_excludes_ids(rng):
    index, vecs = random_index(rng, n=40)
    asm = assemble_context(index, vecs[:5], k=5, c=50, exclude_ids=np.arange(5))
    assert not np.isin(asm.selected_ids, np.arange(5)).any()


def test_assemble_context_matches_brute_force_definition():
    for seed in range(10):
        rng = np.random.default_rng(1000 + seed)
        vecs = rng.normal(size=(80, 5))
        index = build_index(vecs, np.arange(80))
        targets = rng.normal(size=(6, 5))
        k, c = 7, 12
        asm = assemble_context(index, targets, k=k, c=c)
        # independent recomputation
        pool = {}
        for t in targets:
            for cid, sim in brute_force_topk(index.vectors, index.ids, t / np.linalg.norm(t), k):
                pool[cid] = max(pool.get(cid, -np.inf), sim)
        want = sorted(pool, key=lambda j: (-pool[j], j))[:c]
        assert asm.selected_ids.tolist() == want


def test_empty_pool_raises(rng):
    index, vecs = random_index(rng, n=3)
    with pytest.raises(EmptyContextError):
        assemble_context(index, vecs[:1], k=3, c=5, exclude_ids=np.arange(3))


def test_chunk_plan_sizes(rng):
    index, _ = random_index(rng, n=300)
    targets = rng.normal(size=(450, 8))
    plan = chunked_inference_plan(index, targets, m=200, k=8, c=50)
    sizes = [sl.stop - sl.start for sl, _ in plan]
    assert sizes == [200, 200, 50]
    covered = np.concatenate([np.arange(sl.start, sl.stop) for sl, _ in plan])
    assert np.array_equal(covered, np.arange(450))


def test_plan_is_deterministic(rng):
    index, _ = random_index(rng, n=120)
    targets = rng.normal(size=(37, 8))
    p1 = chunked_inference_plan(index, targets, m=10, k=4, c=20)
    p2 = chunked_inference_plan(index, targets, m=10, k=4, c=20)
    for (s1, a1), (s2, a2) in zip(p1, p2):
        assert s1 == s2
        assert a1.selected_ids.tobytes() == a2.selected_ids.tobytes()
        assert a1.selected_scores.tobytes() == a2.selected_scores.tobytes()


def test_neighbor_cache_round_trip(tmp_path, rng):
    records = {
        5: (np.array([1, 2, 3]), np.array([0.9, 0.8, 0.7])),
        9: (np.array([4]), np.array([0.5])),
    }
    fp = encoder_hash({"w": rng.normal(size=(3, 3))})
    path = tmp_path / "cache.bin"
    save_neighbor_cache(path, fp, records)
    loaded = load_neighbor_cache(path, fp)
    assert set(loaded) == {5, 9}
    assert np.array_equal(loaded[5][0], records[5][0])
    assert np.array_equal(loaded[5][1], records[5][1])
    with pytest.raises(ContractError):
        load_neighbor_cache(path, "different-fingerprint")
