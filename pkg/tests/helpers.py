"""Shared test oracles, independent of the library's own backward pass."""

from __future__ import annotations

import numpy as np


def finite_difference_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function at x, entry by entry."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def brute_force_topk(vectors: np.ndarray, ids: np.ndarray, query: np.ndarray, k: int):
    """Exhaustive exact top-k by inner product, ties broken by ascending id."""
    sims = vectors @ query
    order = sorted(range(len(ids)), key=lambda j: (-sims[j], ids[j]))[:k]
    return [(int(ids[j]), float(sims[j])) for j in order]


def poisson_deviance_reference(y, mu) -> float:
    """Direct summation of the mean Poisson deviance, y*log(mu/y) := 0 at y=0."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    total = 0.0
    for yi, mi in zip(y, mu):
        term = mi - yi
        if yi > 0:
            term -= yi * np.log(mi / yi)
        total += 2.0 * term
    return total / len(y)
