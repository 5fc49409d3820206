"""Similarity kernels with a fixed accumulation order.

Every kernel sums over latent dimensions in index order, one dimension at a
time, so a vectorized block and a scalar double loop perform the same IEEE
operations in the same sequence and agree bit for bit.
"""

from __future__ import annotations

import numpy as np

SIMILARITIES = ("cosine", "euclidean", "weighted-dot")
CHUNK = 1024


def unit_rows(z: np.ndarray) -> np.ndarray:
    """Rows scaled to unit norm; zero rows stay zero (cosine 0 against anything)."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.sqrt(np.sum(z * z, axis=1))
    out = np.zeros_like(z)
    nz = norms > 0
    out[nz] = z[nz] / norms[nz, None]
    return out


def cosine(z1, z2) -> float:
    a = np.asarray(z1, dtype=np.float64).ravel()
    b = np.asarray(z2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    ua, ub = unit_rows(a[None, :])[0], unit_rows(b[None, :])[0]
    s = 0.0
    for x, y in zip(ua, ub):
        s += x * y
    return float(s)


def prepare(z: np.ndarray, similarity: str) -> np.ndarray:
    """Per-row preprocessing applied once before any pairwise evaluation."""
    if similarity not in SIMILARITIES:
        raise ValueError(f"unknown similarity {similarity!r}")
    if similarity == "cosine":
        return unit_rows(z)
    return np.asarray(z, dtype=np.float64)


def block_scores(a: np.ndarray, b: np.ndarray, similarity: str,
                 weights: np.ndarray | None = None) -> np.ndarray:
    """|a| x |b| score matrix for prepared rows."""
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    if similarity == "euclidean":
        for l in range(a.shape[1]):
            diff = a[:, l, None] - b[None, :, l]
            out += diff * diff
        return 1.0 / (1.0 + np.sqrt(out))
    if similarity == "weighted-dot":
        for l in range(a.shape[1]):
            out += weights[l] * a[:, l, None] * b[None, :, l]
        return out
    for l in range(a.shape[1]):
        out += a[:, l, None] * b[None, :, l]
    return out


def pair_scores(a: np.ndarray, b: np.ndarray, similarity: str,
                weights: np.ndarray | None = None) -> np.ndarray:
    """Row-aligned scores s(a[i], b[i]) in the same accumulation order as block_scores."""
    out = np.zeros(a.shape[0], dtype=np.float64)
    if similarity == "euclidean":
        for l in range(a.shape[1]):
            diff = a[:, l] - b[:, l]
            out += diff * diff
        return 1.0 / (1.0 + np.sqrt(out))
    if similarity == "weighted-dot":
        for l in range(a.shape[1]):
            out += weights[l] * a[:, l] * b[:, l]
        return out
    for l in range(a.shape[1]):
        out += a[:, l] * b[:, l]
    return out


def naive_score(a: np.ndarray, b: np.ndarray, similarity: str,
                weights: np.ndarray | None = None) -> float:
    """Scalar reference for a single prepared pair."""
    s = 0.0
    if similarity == "euclidean":
        for x, y in zip(a, b):
            diff = x - y
            s += diff * diff
        return float(1.0 / (1.0 + np.sqrt(s)))
    if similarity == "weighted-dot":
        for w, x, y in zip(weights, a, b):
            s += w * x * y
        return float(s)
    for x, y in zip(a, b):
        s += x * y
    return float(s)
