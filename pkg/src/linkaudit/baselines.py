"""Comparison linkers and distance diagnostics: Fellegi-Sunter, random pick, DCR, NNDR, RCE."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, GroundTruth
from .linkage.blocking import BlockIndex, BlockingScheme, assign_blocks
from .linkage.encoding import encode, fit_encoder
from .linkage.similarity import block_scores
from .protection import GeneralizationMap

SMOOTHING = 0.5
U_SAMPLES_PER_RECORD = 10
U_SAMPLE_CAP = 200_000
CHUNK = 1024


# ---------------------------------------------------------------------------
# Fellegi-Sunter

def _fs_features(dataset: Dataset) -> dict[str, np.ndarray]:
    """Agreement keys for the attributes the vectorization uses, compared by exact equality.

    Numerics agree when equal at their recorded (or released) granularity; the
    response lag agrees on whole days; timestamps contribute hour-of-day and
    day-of-week, as in the encoder.
    """
    out = {}
    s = dataset.schema
    if "age" in s:
        out["age"] = np.asarray(dataset["age"], dtype=float).astype(str)
    if "days_after_ad" in s:
        out["days_after_ad"] = np.floor(np.asarray(dataset["days_after_ad"], dtype=float)).astype(str)
    if "purchase_time" in s:
        t = np.asarray(dataset["purchase_time"], dtype=np.int64)
        out["hour"] = ((t // 3_600) % 24).astype(str)
        out["dow"] = (((t // 86_400) + 3) % 7).astype(str)
    for name in ("gender", "region", "purchase_place", "brand_product", "ad_channel"):
        if name in s:
            out[name] = np.asarray(dataset[name]).astype(str)
    return out


def _codes(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    _, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    return inv[: len(a)], inv[len(a):], int(inv.max()) + 1


@dataclass(frozen=True, eq=False)
class FSModel:
    attributes: tuple[str, ...]
    m: np.ndarray
    u: np.ndarray
    smoothing: float = SMOOTHING
    flags: tuple[str, ...] = ()
    generalization: GeneralizationMap | None = field(default=None, repr=False)

    @property
    def agreement_weight(self) -> np.ndarray:
        return np.log(self.m / self.u)

    @property
    def disagreement_weight(self) -> np.ndarray:
        return np.log((1 - self.m) / (1 - self.u))

    @property
    def weights(self) -> np.ndarray:
        """Per-attribute weight on the agreement indicator: composite = sum(w * gamma) + c."""
        w = self.agreement_weight - self.disagreement_weight
        return np.where(self.zero_weight, 0.0, w)

    @property
    def zero_weight(self) -> np.ndarray:
        return np.array([a in self.flags for a in self.attributes], dtype=bool)

    @property
    def constant(self) -> float:
        return float(np.sum(np.where(self.zero_weight, 0.0, self.disagreement_weight)))

    def composite(self, gamma: np.ndarray) -> np.ndarray:
        """Log-likelihood ratio for agreement vectors (rows of ``gamma``)."""
        return np.asarray(gamma, dtype=float) @ self.weights + self.constant


def fs_from_rates(attributes, m, u) -> FSModel:
    return FSModel(tuple(attributes), np.asarray(m, dtype=float), np.asarray(u, dtype=float))


def _aligned(dor: Dataset, gmap: GeneralizationMap | None) -> Dataset:
    return dor if gmap is None else gmap.apply(dor)


def fs_fit(dor: Dataset, dpr: Dataset, scheme: BlockingScheme, gt: GroundTruth,
           smoothing: float = SMOOTHING, seed: int = 0,
           generalization: GeneralizationMap | None = None) -> FSModel:
    """Supervised m/u estimates from co-blocked true pairs and sampled co-blocked non-pairs."""
    if len(gt) == 0:
        raise ValueError("Fellegi-Sunter fitting needs a nonempty ground truth")
    view = _aligned(dor, generalization)
    fa, fb = _fs_features(view), _fs_features(dpr)
    attrs = tuple(fa)
    la, lb = assign_blocks(view, scheme), assign_blocks(dpr, scheme)
    pairs = gt.pairs
    co = la[pairs[:, 0]] == lb[pairs[:, 1]]
    tp = pairs[co] if co.any() else pairs
    # non-pairs: up to U_SAMPLES_PER_RECORD co-blocked candidates per record
    rng = np.random.default_rng([seed, 0xF5])
    index = BlockIndex.build(lb)
    truth = gt.pair_set
    na, nb = [], []
    for i in rng.permutation(len(view)):
        cands = index[la[i]]
        if len(cands) == 0:
            continue
        pick = rng.choice(cands, min(U_SAMPLES_PER_RECORD, len(cands)), replace=False)
        for j in pick:
            if (int(i), int(j)) not in truth:
                na.append(i)
                nb.append(j)
        if len(na) >= U_SAMPLE_CAP:
            break
    na, nb = np.asarray(na, dtype=np.int64), np.asarray(nb, dtype=np.int64)
    m, u, flags = [], [], []
    for a in attrs:
        agree_t = fa[a][tp[:, 0]] == fb[a][tp[:, 1]]
        agree_n = fa[a][na] == fb[a][nb]
        m.append((agree_t.sum() + smoothing) / (len(agree_t) + 2 * smoothing))
        u.append((agree_n.sum() + smoothing) / (len(agree_n) + 2 * smoothing))
        if len(np.unique(np.concatenate([fa[a], fb[a]]))) <= 1:
            flags.append(a)
    return FSModel(attrs, np.array(m), np.array(u), smoothing, tuple(flags), generalization)


@dataclass(frozen=True, eq=False)
class LinkerReport:
    """Top-1 selections of a comparison linker, one entry per original record (-1 = none)."""

    method: str
    selection: np.ndarray
    linked: np.ndarray
    candidate_count: np.ndarray

    @property
    def linkage_rate(self) -> float:
        return float(np.mean(self.linked))

    def precision_at_1(self, gt: GroundTruth) -> float:
        has = np.zeros(len(self.selection), dtype=bool)
        has[gt.pairs[:, 0]] = True
        if not has.any():
            return 0.0
        truth = gt.pair_set
        hit = np.array([(i, int(s)) in truth for i, s in enumerate(self.selection)], dtype=bool)
        return float(np.mean(hit[has]))

    def to_dict(self, gt: GroundTruth | None = None) -> dict:
        d = {"method": self.method, "linkage_rate": self.linkage_rate}
        if gt is not None and len(gt):
            d["precision_at_1"] = self.precision_at_1(gt)
        return d


def fs_assess(model: FSModel, dor: Dataset, dpr: Dataset, scheme: BlockingScheme) -> LinkerReport:
    """Link a pair when its composite log-likelihood ratio is >= 0."""
    view = _aligned(dor, model.generalization)
    fa, fb = _fs_features(view), _fs_features(dpr)
    codes = [_codes(fa[a], fb[a])[:2] for a in model.attributes]
    w, c = model.weights, model.constant
    la, lb = assign_blocks(view, scheme), assign_blocks(dpr, scheme)
    ia, ib = BlockIndex.build(la), BlockIndex.build(lb)
    n = len(view)
    sel = np.full(n, -1, dtype=np.int64)
    linked = np.zeros(n, dtype=bool)
    count = np.zeros(n, dtype=np.int64)
    for label in sorted(ia.groups):
        rows, cands = ia[label], ib[label]
        if len(cands) == 0:
            continue
        count[rows] = len(cands)
        for r0 in range(0, len(rows), CHUNK):
            r = rows[r0 : r0 + CHUNK]
            score = np.full((len(r), len(cands)), c)
            for wk, (ca, cb) in zip(w, codes):
                if wk != 0.0:
                    score += wk * (ca[r][:, None] == cb[cands][None, :])
            j = np.argmax(score, axis=1)
            sel[r] = cands[j]
            linked[r] = score[np.arange(len(r)), j] >= 0
    return LinkerReport("fellegi-sunter", sel, linked, count)


def _binary_matrix(dataset: Dataset) -> tuple[list[str], np.ndarray]:
    names = [a.name for a in dataset.schema.attributes if a.role != "hidden-id"]
    cols = []
    for name in names:
        vals = np.asarray(dataset[name]).astype(str)
        uniq = np.unique(vals)
        if len(uniq) > 2 or not set(uniq) <= {"0", "1", "0.0", "1.0", "True", "False"}:
            raise ValueError(f"attribute {name!r} is not binary")
        cols.append(np.isin(vals, ["1", "1.0", "True"]).astype(float))
    return names, np.column_stack(cols)


def fs_equals_cvpl_check(dor: Dataset, dpr: Dataset, model: FSModel) -> float:
    """Largest |CVPL score - (FS composite - c)| over all cross pairs of a binary dataset pair.

    Each binary attribute is one-hot encoded into two columns carrying the
    attribute's FS weight; with the identity projection the weighted dot
    product of two records equals the weighted count of agreements.
    """
    names, xa = _binary_matrix(dor)
    _, xb = _binary_matrix(dpr)
    if tuple(names) != model.attributes:
        raise ValueError("model attributes do not match the dataset")
    oh_a = np.repeat(xa, 2, axis=1)
    oh_a[:, 0::2] = 1.0 - xa
    oh_b = np.repeat(xb, 2, axis=1)
    oh_b[:, 0::2] = 1.0 - xb
    col_w = np.repeat(model.weights, 2)
    cvpl = block_scores(oh_a, oh_b, "weighted-dot", col_w)
    gamma = (xa[:, None, :] == xb[None, :, :]).astype(float)
    fs = model.composite(gamma.reshape(-1, len(names))).reshape(len(xa), len(xb))
    return float(np.max(np.abs(cvpl - (fs - model.constant))))


# ---------------------------------------------------------------------------
# Random within-block

def random_within_block(dor: Dataset, dpr: Dataset, scheme: BlockingScheme, seed: int) -> LinkerReport:
    la, lb = assign_blocks(dor, scheme), assign_blocks(dpr, scheme)
    ib = BlockIndex.build(lb)
    rng = np.random.default_rng([seed, 0x4A])
    n = len(dor)
    sel = np.full(n, -1, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    draws = rng.random(n)
    for i in range(n):
        cands = ib[la[i]]
        count[i] = len(cands)
        if len(cands):
            sel[i] = cands[int(draws[i] * len(cands))]
    return LinkerReport("random-within-block", sel, sel >= 0, count)


# ---------------------------------------------------------------------------
# Distance diagnostics (standardized encoded space, no projection)

def encoded_pair(dpr: Dataset, dor: Dataset) -> tuple[np.ndarray, np.ndarray]:
    enc = fit_encoder(dor, dpr)
    return encode(enc, dpr), encode(enc, dor)


def nearest_distances(q: np.ndarray, ref: np.ndarray, top: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``top`` smallest Euclidean distances from each row of ``q`` to ``ref``, with indices.

    Candidates are shortlisted with the BLAS expansion and then re-measured
    directly; ties resolve to the lowest reference index.  Rows whose
    shortlist could hide a tie (or a rounding-level near tie) are rescanned
    exhaustively.
    """
    q = np.asarray(q, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    top = min(top, len(ref))
    short = min(len(ref), top + 4)
    rn = np.sum(ref * ref, axis=1)
    dist = np.empty((len(q), top))
    idx = np.empty((len(q), top), dtype=np.int64)
    for s in range(0, len(q), CHUNK):
        qq = q[s : s + CHUNK]
        d2 = rn[None, :] - 2.0 * qq @ ref.T + np.sum(qq * qq, axis=1)[:, None]
        if short < len(ref):
            part = np.argpartition(d2, short, axis=1)
            cand = part[:, :short]
            # smallest excluded value bounds what the shortlist may have missed
            outside = d2[np.arange(len(qq)), part[:, short]]
        else:
            cand = np.tile(np.arange(len(ref)), (len(qq), 1))
            outside = np.full(len(qq), np.inf)
        diff = qq[:, None, :] - ref[cand]
        exact = np.sqrt(np.sum(diff * diff, axis=2))
        order = np.lexsort((cand, exact), axis=1)[:, :top]
        rows = np.arange(len(qq))[:, None]
        d_top, i_top = exact[rows, order], cand[rows, order]
        kth = d_top[:, -1]
        scale = 1e-9 * (1.0 + np.sum(qq * qq, axis=1) + rn.max())
        risky = np.flatnonzero(outside <= kth * kth + scale)
        for r in risky:
            full = np.sqrt(np.sum((ref - qq[r]) ** 2, axis=1))
            o = np.lexsort((np.arange(len(ref)), full))[:top]
            d_top[r], i_top[r] = full[o], o
        dist[s : s + len(qq)] = d_top
        idx[s : s + len(qq)] = i_top
    return dist, idx


@dataclass(frozen=True, eq=False)
class DistanceReport:
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True, eq=False)
class Neighbours:
    """Two nearest originals for every protected record (shared by DCR, NNDR and RCE)."""

    dist: np.ndarray  # m x 2
    idx: np.ndarray   # m x 2


def neighbours(dpr_x: np.ndarray, dor_x: np.ndarray) -> Neighbours:
    top = 2 if len(dor_x) >= 2 else 1
    d, i = nearest_distances(dpr_x, dor_x, top=top)
    return Neighbours(d, i)


def dcr(dpr_x: np.ndarray, dor_x: np.ndarray, nb: Neighbours | None = None) -> DistanceReport:
    """Distance from each protected record to its closest original."""
    nb = nb or neighbours(dpr_x, dor_x)
    return DistanceReport(nb.dist[:, 0].copy())


def nndr(dpr_x: np.ndarray, dor_x: np.ndarray, nb: Neighbours | None = None) -> DistanceReport:
    """Nearest over second-nearest original distance; 1.0 when both are zero."""
    if len(dor_x) < 2:
        raise ValueError("NNDR needs at least 2 original records")
    nb = nb or neighbours(dpr_x, dor_x)
    d1, d2 = nb.dist[:, 0], nb.dist[:, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(d2 > 0, d1 / d2, 1.0)
    return DistanceReport(r)


def _rce_from(nearest: np.ndarray, gt: GroundTruth) -> float:
    src = gt.transpose()
    has = np.zeros(len(nearest), dtype=bool)
    has[src.pairs[:, 0]] = True
    if not has.any():
        return 0.0
    truth = src.pair_set
    hit = np.array([(j, int(nearest[j])) in truth for j in range(len(nearest))], dtype=bool)
    return float(np.mean(hit[has]))


def rce(dpr_x: np.ndarray, dor_x: np.ndarray, gt: GroundTruth, nb: Neighbours | None = None) -> float:
    """Share of protected records whose closest original is their own source."""
    if len(gt) == 0:
        raise ValueError("RCE needs a nonempty ground truth")
    nb = nb or neighbours(dpr_x, dor_x)
    return _rce_from(nb.idx[:, 0], gt)


def rce_null(dpr_x: np.ndarray, dor_x: np.ndarray, gt: GroundTruth, seed: int,
             nb: Neighbours | None = None) -> float:
    """RCE after randomly re-pairing protected records with sources."""
    nb = nb or neighbours(dpr_x, dor_x)
    rng = np.random.default_rng([seed, 0x9E])
    perm = rng.permutation(len(dor_x))
    shuffled = GroundTruth(np.column_stack([perm[gt.pairs[:, 0]], gt.pairs[:, 1]]),
                           len(dor_x), len(dpr_x))
    return _rce_from(nb.idx[:, 0], shuffled)
