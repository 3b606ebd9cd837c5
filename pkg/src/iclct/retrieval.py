"""Exact cosine-similarity search over CLS embeddings and context assembly.

The index stores l2-normalized vectors; similarity is the plain inner
product. Search is exhaustive and exact (fine at portfolio scale, and it
makes results verifiable against a brute-force scan); ties are broken by
ascending stored id. Context assembly pools the per-target neighbor lists
of a whole target chunk, scores each candidate by its best similarity to
any chunk member, and keeps the top ``c`` after deduplication.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateEmbeddingError, EmptyContextError

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingIndex:
    vectors: np.ndarray  # (n, d), rows l2-normalized
    ids: np.ndarray      # (n,), int64


@dataclass
class ContextAssembly:
    """Ranked candidate pool for one target chunk."""

    selected_ids: np.ndarray
    selected_scores: np.ndarray
    pool_size: int


def build_index(embeddings: np.ndarray, ids) -> EmbeddingIndex:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ContractError("index needs a nonempty (n, d) embedding matrix")
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError(
            f"zero-norm embedding at rows {np.flatnonzero(norms == 0.0)[:5]}"
        )
    return EmbeddingIndex(vectors=embeddings / norms[:, None],
                          ids=np.asarray(ids, dtype=np.int64))


def _normalize_query(query: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    norm = np.linalg.norm(query)
    if norm == 0.0:
        raise DegenerateEmbeddingError("zero-norm query")
    return query / norm


def _topk_from_sims(sims: np.ndarray, ids: np.ndarray, k: int):
    """Exact top-k by similarity, ties broken by ascending id."""
    n = sims.shape[0]
    if k >= n:
        order = np.lexsort((ids, -sims))
        return order
    part = np.argpartition(-sims, k - 1)
    threshold = sims[part[:k]].min()
    cand = np.flatnonzero(sims >= threshold)
    cand = cand[np.lexsort((ids[cand], -sims[cand]))]
    return cand[:k]


def knn(index: EmbeddingIndex, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k (id, similarity) by inner product on normalized vectors."""
    if k < 1:
        raise ContractError("k must be at least 1")
    if k > len(index.ids):
        logger.warning("k=%d exceeds index size %d; returning the full ranking",
                       k, len(index.ids))
    k = min(k, len(index.ids))
    sims = index.vectors @ _normalize_query(query)
    rows = _topk_from_sims(sims, index.ids, k)
    return [(int(index.ids[r]), float(sims[r])) for r in rows]


def knn_batch(index: EmbeddingIndex, queries: np.ndarray, k: int):
    """Per-query top-k over a (m, d) query block; one GEMM, then selection."""
    if k < 1:
        raise ContractError("k must be at least 1")
    k = min(k, len(index.ids))
    queries = np.asarray(queries, dtype=np.float64)
    norms = np.linalg.norm(queries, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError("zero-norm query in batch")
    sims = index.vectors @ (queries / norms).T  # (n, m)
    out = []
    for col in range(queries.shape[0]):
        rows = _topk_from_sims(sims[:, col], index.ids, k)
        out.append((index.ids[rows], sims[rows, col]))
    return out


def assemble_context(index: EmbeddingIndex, target_embeddings: np.ndarray, k: int = 64,
                     c: int = 1000, exclude_ids=None) -> ContextAssembly:
    """Union of per-target neighbor lists, scored by best similarity, capped at c.

    ``exclude_ids`` removes the targets themselves when they come from the
    indexed set, so a row can never serve as its own context.
    """
    exclude = np.asarray([] if exclude_ids is None else list(exclude_ids), dtype=np.int64)
    per_target = knn_batch(index, np.atleast_2d(target_embeddings), k)
    all_ids = np.concatenate([ids for ids, _ in per_target])
    all_sims = np.concatenate([sims for _, sims in per_target])
    if exclude.size:
        keep = ~np.isin(all_ids, exclude)
        all_ids, all_sims = all_ids[keep], all_sims[keep]
    if all_ids.size == 0:
        raise EmptyContextError("no context candidates after exclusion")
    # best score per unique id
    uniq, inverse = np.unique(all_ids, return_inverse=True)
    best = np.full(uniq.shape, -np.inf)
    np.maximum.at(best, inverse, all_sims)
    order = np.lexsort((uniq, -best))
    take = order[: min(c, len(uniq))]
    return ContextAssembly(selected_ids=uniq[take], selected_scores=best[take],
                           pool_size=int(len(uniq)))


def chunked_inference_plan(index: EmbeddingIndex, target_embeddings: np.ndarray,
                           m: int = 200, k: int = 64, c: int = 1000,
                           exclude_self: bool = False):
    """Consecutive target chunks of size m, each with its assembled context.

    Returns a list of (target_row_slice, ContextAssembly). With
    ``exclude_self`` the chunk's own ids are removed from its candidate pool
    (for targets drawn from the indexed training set).
    """
    target_embeddings = np.asarray(target_embeddings, dtype=np.float64)
    n = target_embeddings.shape[0]
    if n == 0:
        raise ContractError("empty target set")
    plan = []
    for lo in range(0, n, m):
        hi = min(lo + m, n)
        exclude = index.ids[lo:hi] if exclude_self else None
        plan.append((slice(lo, hi),
                     assemble_context(index, target_embeddings[lo:hi], k, c, exclude)))
    return plan


# ---------------------------------------------------------------------------
# on-disk neighbor cache
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"ICLNN"
_CACHE_VERSION = 1


def encoder_hash(named_arrays: dict) -> str:
    """Stable fingerprint of the parameter arrays used to embed queries."""
    digest = hashlib.sha256()
    for name in sorted(named_arrays):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(named_arrays[name]).tobytes())
    return digest.hexdigest()


def save_neighbor_cache(path, fingerprint: str, records: dict) -> None:
    """records: query id -> (ids array, similarity array)."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<I", _CACHE_VERSION))
        fp = fingerprint.encode()
        fh.write(struct.pack("<I", len(fp)))
        fh.write(fp)
        fh.write(struct.pack("<Q", len(records)))
        for qid in records:
            ids, sims = records[qid]
            fh.write(struct.pack("<qI", int(qid), len(ids)))
            for i, s in zip(ids, sims):
                fh.write(struct.pack("<qd", int(i), float(s)))


def load_neighbor_cache(path, expected_fingerprint: str | None = None) -> dict:
    with open(path, "rb") as fh:
        if fh.read(5) != _CACHE_MAGIC:
            raise ContractError(f"{path} is not a neighbor cache")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CACHE_VERSION:
            raise ContractError(f"unsupported neighbor cache version {version}")
        (fp_len,) = struct.unpack("<I", fh.read(4))
        fingerprint = fh.read(fp_len).decode()
        if expected_fingerprint is not None and fingerprint != expected_fingerprint:
            raise ContractError("neighbor cache was built with different encoder weights")
        (n_records,) = struct.unpack("<Q", fh.read(8))
        records = {}
        for _ in range(n_records):
            qid, count = struct.unpack("<qI", fh.read(12))
            ids = np.empty(count, dtype=np.int64)
            sims = np.empty(count, dtype=np.float64)
            for j in range(count):
                ids[j], sims[j] = struct.unpack("<qd", fh.read(16))
            records[qid] = (ids, sims)
        return records
