"""Linear latent projection (PCA) fitted on a chosen subset of the data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("joint", "source-only", "target-only", "identity")


@dataclass(frozen=True, eq=False)
class Projection:
    strategy: str
    mean: np.ndarray
    components: np.ndarray  # k x d, rows orthonormal
    explained_variance_ratio: np.ndarray
    variance_retained: float

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return project(self, x)


def _pca(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / max(len(x) - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order].T
    # sign convention: largest-magnitude loading positive
    pivot = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), pivot])
    signs[signs == 0] = 1.0
    return mean, vecs * signs[:, None], vals


def fit_projection(source: np.ndarray, target: np.ndarray | None = None,
                   variance_retained: float = 0.90, strategy: str = "joint",
                   min_components: int = 3, max_components: int = 50) -> Projection:
    """Fit on the rows selected by ``strategy``.

    k is the smallest count whose cumulative explained variance reaches
    ``variance_retained``, clamped to [min_components, max_components] and to d.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown projection strategy {strategy!r}")
    source = np.asarray(source, dtype=np.float64)
    d = source.shape[1]
    if strategy == "identity":
        return Projection(strategy, np.zeros(d), np.eye(d), np.full(d, np.nan), 1.0)
    if strategy == "joint":
        fit_on = source if target is None else np.vstack([source, target])
    elif strategy == "source-only":
        fit_on = source
    else:
        if target is None:
            raise ValueError("target-only projection needs a target matrix")
        fit_on = np.asarray(target, dtype=np.float64)
    if len(fit_on) < 2:
        raise ValueError("projection needs at least 2 rows")
    mean, vecs, vals = _pca(fit_on)
    total = vals.sum()
    if total <= 0:
        raise ValueError("rank-0 input: no variance to project")
    ratio = vals / total
    cum = np.cumsum(ratio)
    k = int(np.searchsorted(cum, variance_retained - 1e-12) + 1)
    k = min(max(k, min_components), max_components, d)
    return Projection(strategy, mean, vecs[:k].copy(), ratio[:k].copy(), float(variance_retained))


def project(projection: Projection, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != projection.dim:
        raise ValueError(f"matrix has {x.shape[1]} columns, projection expects {projection.dim}")
    if projection.strategy == "identity":
        return x.copy()
    return (x - projection.mean) @ projection.components.T
