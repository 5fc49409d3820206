"""Utility proxies for a release: four components, reported side by side."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.spatial.distance import jensenshannon

from .data import Dataset, GroundTruth
from .linkage.encoding import DEFAULT_CATEGORICAL, EncodingConfig, encode, fit_encoder

N_BINS = 20
N_DISTANCE_PAIRS = 2000
TARGET = "ad_channel"


@dataclass(frozen=True)
class UtilityReport:
    correlation_preservation: float | None
    marginal_similarity: float
    downstream_accuracy_ratio: float | None
    pairwise_distance_preservation: float | None
    composite: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def _corr_upper(x: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.corrcoef(x, rowvar=False)
    iu = np.triu_indices(c.shape[0], k=1)
    return c[iu]


def correlation_preservation(a: np.ndarray, b: np.ndarray) -> float | None:
    ca, cb = _corr_upper(a), _corr_upper(b)
    ok = ~(np.isnan(ca) | np.isnan(cb))
    if ok.sum() < 3 or np.std(ca[ok]) == 0 or np.std(cb[ok]) == 0:
        return 1.0 if ok.sum() >= 3 and np.array_equal(ca[ok], cb[ok]) else None
    return float(stats.pearsonr(ca[ok], cb[ok])[0])


def _jsd(p: np.ndarray, q: np.ndarray) -> float:
    return float(jensenshannon(p, q, base=2) ** 2)


def marginal_similarity(dor: Dataset, dpr: Dataset, bins: int = N_BINS) -> float:
    """1 - mean base-2 Jensen-Shannon divergence over observable attributes."""
    divs = []
    for attr in dor.schema.attributes:
        if attr.role in ("hidden-id", "sensitive"):
            continue
        a, b = dor[attr.name], dpr[attr.name]
        if attr.kind == "categorical":
            cats = np.unique(np.concatenate([a.astype(str), b.astype(str)]))
            pa = np.array([np.sum(a.astype(str) == c) for c in cats], dtype=float)
            pb = np.array([np.sum(b.astype(str) == c) for c in cats], dtype=float)
        else:
            a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
            lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
            if hi == lo:
                divs.append(0.0)
                continue
            edges = np.linspace(lo, hi, bins + 1)
            pa = np.histogram(a, edges)[0].astype(float)
            pb = np.histogram(b, edges)[0].astype(float)
        divs.append(_jsd(pa / pa.sum(), pb / pb.sum()))
    return 1.0 - float(np.mean(divs))


def _nearest_centroid_accuracy(xtr, ytr, xte, yte) -> float:
    classes = np.unique(ytr)
    cents = np.array([xtr[ytr == c].mean(axis=0) for c in classes])
    d = ((xte[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    pred = classes[np.argmin(d, axis=1)]
    return float(np.mean(pred == yte))


def downstream_accuracy_ratio(dor: Dataset, dpr: Dataset, gt: GroundTruth | None,
                              seed: int, test_fraction: float = 0.2) -> float | None:
    """Nearest-centroid ad_channel accuracy on held-out originals, release-trained over original-trained.

    When ``gt`` is known, release rows derived from the held-out originals are
    left out of training.  The ratio is capped at 1.
    """
    if TARGET not in dor.schema or TARGET not in dpr.schema:
        return None
    cats = tuple(c for c in DEFAULT_CATEGORICAL if c != "channel")
    enc = fit_encoder(dor, dpr, EncodingConfig(categorical=cats))
    xa, xb = encode(enc, dor), encode(enc, dpr)
    ya, yb = dor[TARGET].astype(str), dpr[TARGET].astype(str)
    rng = np.random.default_rng([seed, 0x07])
    perm = rng.permutation(len(dor))
    n_test = max(1, int(round(test_fraction * len(dor))))
    test, train = perm[:n_test], perm[n_test:]
    keep_b = np.ones(len(dpr), dtype=bool)
    if gt is not None and len(gt):
        held = np.zeros(len(dor), dtype=bool)
        held[test] = True
        keep_b[gt.pairs[held[gt.pairs[:, 0]], 1]] = False
    if not keep_b.any() or len(train) == 0:
        return None
    acc_o = _nearest_centroid_accuracy(xa[train], ya[train], xa[test], ya[test])
    acc_p = _nearest_centroid_accuracy(xb[keep_b], yb[keep_b], xa[test], ya[test])
    if acc_o == 0:
        return None
    return min(1.0, acc_p / acc_o)


def distance_preservation(dor: Dataset, dpr: Dataset, gt: GroundTruth | None, seed: int,
                          n_pairs: int = N_DISTANCE_PAIRS) -> float | None:
    """Spearman correlation of encoded distances over random pairs of true correspondences."""
    if gt is None or len(gt) < 2:
        return None
    enc = fit_encoder(dor, dpr)
    xa, xb = encode(enc, dor), encode(enc, dpr)
    rng = np.random.default_rng([seed, 0xD15])
    i = rng.integers(0, len(gt), n_pairs)
    j = rng.integers(0, len(gt), n_pairs)
    keep = i != j
    p, q = gt.pairs[i[keep]], gt.pairs[j[keep]]
    da = np.linalg.norm(xa[p[:, 0]] - xa[q[:, 0]], axis=1)
    db = np.linalg.norm(xb[p[:, 1]] - xb[q[:, 1]], axis=1)
    if len(da) < 3:
        return None
    if np.array_equal(da, db):
        return 1.0
    r = stats.spearmanr(da, db)[0]
    return None if np.isnan(r) else float(r)


def utility(dor: Dataset, dpr: Dataset, gt: GroundTruth | None = None, seed: int = 0) -> UtilityReport:
    flags = []
    enc = fit_encoder(dor, dpr)
    corr = correlation_preservation(encode(enc, dor), encode(enc, dpr))
    if corr is None:
        flags.append("correlation preservation undefined")
    marg = marginal_similarity(dor, dpr)
    acc = downstream_accuracy_ratio(dor, dpr, gt, seed)
    if acc is None:
        flags.append("downstream accuracy unavailable")
    dist = distance_preservation(dor, dpr, gt, seed)
    if dist is None:
        flags.append("distance preservation needs ground truth")
    parts = [v for v in (corr, marg, acc, dist) if v is not None]
    return UtilityReport(corr, marg, acc, dist, float(np.mean(parts)), tuple(flags))
