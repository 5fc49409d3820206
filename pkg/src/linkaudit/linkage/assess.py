"""Chunked within-block top-1 assessment and the re-thresholdable report."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..data import Dataset, GroundTruth
from .blocking import BlockIndex, BlockingScheme, assign_blocks
from .encoding import Encoder, encode
from .projection import Projection, project
from .similarity import CHUNK, block_scores, naive_score, pair_scores, prepare

SCHEMA_VERSION = 1
DEFAULT_TAUS = np.round(np.arange(0.70, 0.99 + 1e-9, 0.01), 2)


@dataclass(frozen=True)
class AssessOptions:
    similarity: str = "cosine"
    chunk_size: int = CHUNK
    max_block_size: int | None = 5000
    non_match_samples: int = 100
    seed: int = 0
    exclude_self: bool = False
    workers: int = 1
    weights: tuple[float, ...] | None = None


def label_seed(seed: int, label: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass(eq=False)
class AssessmentReport:
    """Per-original-record top-1 results plus the samples needed for evaluation.

    ``max_sim`` is NaN and ``argmax`` is -1 exactly when a record has no
    candidates.  ``s_minus`` holds the sampled non-match similarities, one row
    per record, NaN-padded.  When ground truth was supplied, ``gt_pairs`` lists
    the true pairs with ``gt_coblocked`` and ``gt_sim`` (NaN when split by
    blocking).
    """

    labels: np.ndarray
    candidate_count: np.ndarray
    max_sim: np.ndarray
    argmax: np.ndarray
    s_minus: np.ndarray
    block_summary: dict
    fingerprint: dict
    lower_bound_mode: bool = False
    n_protected: int = 0
    gt_pairs: np.ndarray | None = None
    gt_coblocked: np.ndarray | None = None
    gt_sim: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.max_sim)

    @property
    def has_ground_truth(self) -> bool:
        return self.gt_pairs is not None

    def cvpl_lr(self, tau: float) -> float:
        return cvpl_lr(self, tau)

    def curve(self, taus: Sequence[float] = DEFAULT_TAUS) -> np.ndarray:
        linked = np.where(np.isnan(self.max_sim), -np.inf, self.max_sim)
        return np.array([float(np.mean(linked >= t)) for t in taus])

    @property
    def true_sim(self) -> np.ndarray:
        """Per original record, the best similarity to any co-blocked true match (NaN if none)."""
        out = np.full(self.n, np.nan)
        if self.gt_pairs is None:
            return out
        ok = self.gt_coblocked
        rows, sims = self.gt_pairs[ok, 0], self.gt_sim[ok]
        order = np.lexsort((sims, rows))
        out[rows[order]] = sims[order]
        return out

    def argmax_correct(self) -> np.ndarray:
        if self.gt_pairs is None:
            raise ValueError("report has no ground truth")
        truth = set(zip(self.gt_pairs[:, 0].tolist(), self.gt_pairs[:, 1].tolist()))
        return np.array([(i, int(a)) in truth for i, a in enumerate(self.argmax)], dtype=bool)

    def subset(self, indices: np.ndarray) -> "AssessmentReport":
        """Report restricted to (possibly repeated) original records, re-indexed 0..len-1."""
        idx = np.asarray(indices, dtype=np.int64)
        kw = {}
        if self.gt_pairs is not None:
            starts = np.searchsorted(self.gt_pairs[:, 0], idx, side="left")
            stops = np.searchsorted(self.gt_pairs[:, 0], idx, side="right")
            counts = stops - starts
            sel = np.concatenate([np.arange(a, b) for a, b in zip(starts, stops)]) if counts.sum() else np.empty(0, np.int64)
            new_rows = np.repeat(np.arange(len(idx)), counts)
            kw = dict(
                gt_pairs=np.column_stack([new_rows, self.gt_pairs[sel, 1]]).astype(np.int64),
                gt_coblocked=self.gt_coblocked[sel],
                gt_sim=self.gt_sim[sel],
            )
        return AssessmentReport(
            self.labels[idx], self.candidate_count[idx], self.max_sim[idx], self.argmax[idx],
            self.s_minus[idx], dict(self.block_summary), dict(self.fingerprint),
            self.lower_bound_mode, self.n_protected, **kw,
        )

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else np.where(np.isnan(x), None, x).tolist() if x.dtype.kind == "f" else x.tolist()

        d = {
            "schema_version": SCHEMA_VERSION,
            "fingerprint": self.fingerprint,
            "lower_bound_mode": self.lower_bound_mode,
            "n_original": self.n,
            "n_protected": self.n_protected,
            "block_summary": self.block_summary,
            "records": {
                "block": self.labels.tolist(),
                "candidate_count": self.candidate_count.tolist(),
                "max_similarity": arr(self.max_sim),
                "argmax": [None if a < 0 else int(a) for a in self.argmax],
            },
            "s_minus": [[v for v in row if not np.isnan(v)] for row in self.s_minus],
        }
        if self.gt_pairs is not None:
            d["ground_truth"] = {
                "pairs": self.gt_pairs.tolist(),
                "coblocked": self.gt_coblocked.tolist(),
                "similarity": arr(self.gt_sim),
            }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "AssessmentReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {d.get('schema_version')!r}")

        def f(xs):
            return np.array([np.nan if v is None else v for v in xs], dtype=np.float64)

        rec = d["records"]
        rows = d["s_minus"]
        width = max((len(r) for r in rows), default=0)
        sm = np.full((len(rows), width), np.nan)
        for i, r in enumerate(rows):
            sm[i, : len(r)] = r
        kw = {}
        if "ground_truth" in d:
            g = d["ground_truth"]
            kw = dict(
                gt_pairs=np.array(g["pairs"], dtype=np.int64).reshape(-1, 2),
                gt_coblocked=np.array(g["coblocked"], dtype=bool),
                gt_sim=f(g["similarity"]),
            )
        return cls(
            np.array(rec["block"], dtype=object),
            np.array(rec["candidate_count"], dtype=np.int64),
            f(rec["max_similarity"]),
            np.array([-1 if a is None else a for a in rec["argmax"]], dtype=np.int64),
            sm, d["block_summary"], d["fingerprint"], d["lower_bound_mode"],
            d["n_protected"], **kw,
        )

    @classmethod
    def from_json(cls, text: str) -> "AssessmentReport":
        return cls.from_dict(json.loads(text))


def cvpl_lr(report: AssessmentReport, tau: float) -> float:
    """Fraction of all original records with some candidate at or above ``tau``."""
    linked = np.where(np.isnan(report.max_sim), -np.inf, report.max_sim) >= tau
    return float(np.mean(linked))


def _summary(sizes: np.ndarray, n_candidates: np.ndarray) -> dict:
    if len(sizes) == 0:
        return {"count": 0, "min": 0, "max": 0, "median": 0.0, "mean": 0.0, "mean_candidates": 0.0}
    return {
        "count": int(len(sizes)),
        "min": int(sizes.min()),
        "max": int(sizes.max()),
        "median": float(np.median(sizes)),
        "mean": float(sizes.mean()),
        "mean_candidates": float(n_candidates.mean()) if len(n_candidates) else 0.0,
    }


def assess(dor: Dataset, dpr: Dataset, scheme: BlockingScheme, encoder: Encoder,
           projection: Projection, options: AssessOptions | None = None,
           gt: GroundTruth | None = None) -> AssessmentReport:
    """Top-1 within-block similarity for every original record.

    ``gt`` is used only to record true-pair similarities and to keep true
    matches out of the non-match sample; it never affects the maxima.
    """
    opt = options or AssessOptions()
    za = project(projection, encode(encoder, dor))
    zb = project(projection, encode(encoder, dpr))
    return assess_latent(assign_blocks(dor, scheme), assign_blocks(dpr, scheme), za, zb, opt, gt,
                         fingerprint={
                             "scheme": scheme.label,
                             "encoder": encoder.fingerprint(),
                             "projection": projection.strategy,
                             "latent_dim": int(projection.k),
                         })


def assess_latent(labels_a: np.ndarray, labels_b: np.ndarray, za: np.ndarray, zb: np.ndarray,
                  options: AssessOptions | None = None, gt: GroundTruth | None = None,
                  fingerprint: dict | None = None) -> AssessmentReport:
    """Core of :func:`assess` on already-projected matrices and block labels."""
    opt = options or AssessOptions()
    if za.shape[1] != zb.shape[1]:
        raise ValueError(f"latent dimension mismatch: {za.shape[1]} vs {zb.shape[1]}")
    weights = None if opt.weights is None else np.asarray(opt.weights, dtype=np.float64)
    if opt.similarity == "weighted-dot" and (weights is None or len(weights) != za.shape[1]):
        raise ValueError("weighted-dot similarity needs one weight per latent dimension")
    pa, pb = prepare(za, opt.similarity), prepare(zb, opt.similarity)
    n = len(pa)
    labels_a = np.asarray(labels_a, dtype=object)
    index_b = BlockIndex.build(labels_b)
    index_a = BlockIndex.build(labels_a)

    cand_count = np.zeros(n, dtype=np.int64)
    max_sim = np.full(n, np.nan)
    argmax = np.full(n, -1, dtype=np.int64)
    s_minus = np.full((n, opt.non_match_samples), np.nan)
    truth = None
    if gt is not None:
        truth = {}
        for a, b in gt.pairs:
            truth.setdefault(int(a), set()).add(int(b))

    truncated = []

    def run_block(label):
        rows = index_a[label]
        cands = index_b[label]
        if len(cands) == 0:
            return
        if opt.max_block_size is not None and len(cands) > opt.max_block_size:
            rng = label_seed(opt.seed, "trunc:" + label)
            cands = np.sort(rng.choice(cands, opt.max_block_size, replace=False))
            truncated.append(label)
        cand_count[rows] = len(cands)
        if opt.exclude_self:
            cand_count[rows] -= np.isin(rows, cands)
        for r0 in range(0, len(rows), opt.chunk_size):
            r = rows[r0 : r0 + opt.chunk_size]
            best = np.full(len(r), -np.inf)
            best_idx = np.full(len(r), -1, dtype=np.int64)
            for c0 in range(0, len(cands), opt.chunk_size):
                c = cands[c0 : c0 + opt.chunk_size]
                s = block_scores(pa[r], pb[c], opt.similarity, weights)
                if opt.exclude_self:
                    s[r[:, None] == c[None, :]] = -np.inf
                j = np.argmax(s, axis=1)
                m = s[np.arange(len(r)), j]
                better = m > best
                best[better] = m[better]
                best_idx[better] = c[j[better]]
            found = best_idx >= 0
            max_sim[r[found]] = best[found]
            argmax[r[found]] = best_idx[found]
        if opt.non_match_samples > 0:
            _sample_non_matches(label, rows, cands)

    def _sample_non_matches(label, rows, cands):
        rng = label_seed(opt.seed, "neg:" + label)
        k = opt.non_match_samples
        # a few spare draws to cover the excluded argmax and true matches
        draw = min(len(cands), k + 2 + (0 if truth is None else 4))
        for i in rows:
            chosen = cands[rng.choice(len(cands), draw, replace=False)]
            drop = chosen == argmax[i]
            if opt.exclude_self:
                drop |= chosen == i
            if truth is not None and i in truth:
                drop |= np.isin(chosen, list(truth[i]))
            chosen = chosen[~drop]
            if len(chosen) > k:
                chosen = chosen[:k]
            if len(chosen) == 0:
                continue
            sims = pair_scores(np.repeat(pa[i : i + 1], len(chosen), axis=0), pb[chosen],
                               opt.similarity, weights)
            s_minus[i, : len(chosen)] = sims

    labels = sorted(index_a.groups)
    if opt.workers > 1:
        with ThreadPoolExecutor(opt.workers) as ex:
            list(ex.map(run_block, labels))
    else:
        for lab in labels:
            run_block(lab)

    kw = {}
    if gt is not None:
        pairs = gt.pairs
        co = labels_a[pairs[:, 0]] == np.asarray(labels_b, dtype=object)[pairs[:, 1]]
        if opt.exclude_self:
            co &= pairs[:, 0] != pairs[:, 1]
        sims = np.full(len(pairs), np.nan)
        if co.any():
            p = pairs[co]
            sims[co] = pair_scores(pa[p[:, 0]], pb[p[:, 1]], opt.similarity, weights)
        kw = dict(gt_pairs=pairs.copy(), gt_coblocked=co, gt_sim=sims)

    dpr_sizes = np.array([len(index_b[l]) for l in labels if len(index_b[l])], dtype=np.int64)
    fp = dict(fingerprint or {})
    fp.update(similarity=opt.similarity, seed=int(opt.seed), max_block_size=opt.max_block_size,
              exclude_self=opt.exclude_self)
    return AssessmentReport(
        labels_a.copy(), cand_count, max_sim, argmax, s_minus,
        _summary(dpr_sizes, cand_count), fp, bool(truncated), len(pb), **kw,
    )


def naive_maxima(labels_a, labels_b, za, zb, similarity: str = "cosine",
                 weights=None, exclude_self: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Reference all-pairs-within-block scan with scalar arithmetic (tests and audits)."""
    pa, pb = prepare(za, similarity), prepare(zb, similarity)
    n = len(pa)
    best = np.full(n, np.nan)
    arg = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for j in range(len(pb)):
            if labels_a[i] != labels_b[j] or (exclude_self and i == j):
                continue
            s = naive_score(pa[i], pb[j], similarity, weights)
            if arg[i] < 0 or s > best[i]:
                best[i], arg[i] = s, j
    return best, arg
