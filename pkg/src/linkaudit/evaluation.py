"""Ground-truth metrics, threshold calibration, risk surfaces and bootstrap intervals."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import Dataset
from .linkage.assess import DEFAULT_TAUS, AssessmentReport, AssessOptions, assess
from .linkage.blocking import BlockingScheme
from .linkage.encoding import EncodingConfig, encode, fit_encoder
from .linkage.projection import fit_projection


@dataclass(frozen=True)
class MetricBundle:
    tau: float
    cvpl_lr: float
    tlr: float
    flr: float
    precision_at_1: float
    r_block: float
    r_match: float
    r_total: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def _require_gt(report: AssessmentReport) -> None:
    if not report.has_ground_truth or len(report.gt_pairs) == 0:
        raise ValueError("metrics need a report assessed with a nonempty ground truth")


def precision_at_1(report: AssessmentReport) -> float:
    """Share of records with a true counterpart whose top candidate is one."""
    _require_gt(report)
    has_match = np.zeros(report.n, dtype=bool)
    has_match[report.gt_pairs[:, 0]] = True
    if not has_match.any():
        return 0.0
    return float(np.mean(report.argmax_correct()[has_match]))


def false_link_rate(report: AssessmentReport, tau: float) -> float:
    """Sampled estimate of P(some wrong co-blocked candidate reaches tau).

    A record counts when its top candidate is wrong and reaches ``tau`` or when
    any sampled non-match does.  Records without candidates are excluded.
    """
    _require_gt(report)
    has_cands = report.candidate_count > 0
    if not has_cands.any():
        return 0.0
    wrong_top = (~report.argmax_correct()) & (np.nan_to_num(report.max_sim, nan=-np.inf) >= tau)
    with np.errstate(invalid="ignore"):
        sampled = np.any(np.nan_to_num(report.s_minus, nan=-np.inf) >= tau, axis=1)
    return float(np.mean((wrong_top | sampled)[has_cands]))


def metrics(report: AssessmentReport, tau: float) -> MetricBundle:
    """All ground-truth metrics at one threshold.

    r_match is the TLR conditional on co-blocking, so r_total is their product.
    """
    _require_gt(report)
    flags = []
    co = report.gt_coblocked
    r_block = float(np.mean(co))
    if co.any():
        tlr = float(np.mean(report.gt_sim[co] >= tau))
    else:
        tlr = 0.0
        flags.append("no co-blocked true pairs; TLR set to 0")
    if report.lower_bound_mode:
        flags.append("lower_bound_mode")
    return MetricBundle(
        tau=float(tau),
        cvpl_lr=report.cvpl_lr(tau),
        tlr=tlr,
        flr=false_link_rate(report, tau),
        precision_at_1=precision_at_1(report),
        r_block=r_block,
        r_match=tlr,
        r_total=r_block * tlr,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class SimilarityDistributions:
    s_plus: np.ndarray
    s_minus: np.ndarray
    s_plus_empty: bool

    def overlap(self, q: float = 5.0) -> float:
        """Fraction of S- at or above the q-th percentile of S+."""
        if self.s_plus_empty or len(self.s_minus) == 0:
            return float("nan")
        cut = np.percentile(self.s_plus, q)
        return float(np.mean(self.s_minus >= cut))


def similarity_distributions(report: AssessmentReport) -> SimilarityDistributions:
    s_minus = report.s_minus[~np.isnan(report.s_minus)]
    if not report.has_ground_truth:
        return SimilarityDistributions(np.empty(0), s_minus, True)
    s_plus = report.gt_sim[report.gt_coblocked]
    return SimilarityDistributions(s_plus, s_minus, len(s_plus) == 0)


@dataclass(frozen=True)
class Calibration:
    tau: float
    exceedance: float
    feasible: bool
    alpha: float
    alpha_bonferroni: float | None
    existential: float | None


def existential_false_link(alpha: float, m: float) -> float:
    """Chance that at least one of ``m`` independent non-matches exceeds a level-alpha threshold."""
    return 1.0 - (1.0 - alpha) ** m


def calibrate_threshold(s_minus: np.ndarray, alpha: float, grid: Sequence[float] = DEFAULT_TAUS,
                        mean_candidates: float | None = None) -> Calibration:
    """Smallest grid threshold whose empirical pairwise exceedance is at most ``alpha``."""
    s = np.asarray(s_minus, dtype=np.float64)
    s = s[~np.isnan(s)]
    if len(s) == 0:
        raise ValueError("empty non-match sample")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    grid = np.sort(np.asarray(grid, dtype=np.float64))
    s_sorted = np.sort(s)
    exceed = 1.0 - np.searchsorted(s_sorted, grid, side="left") / len(s)
    ok = np.flatnonzero(exceed <= alpha)
    feasible = len(ok) > 0
    j = ok[0] if feasible else len(grid) - 1
    bonf = existential = None
    if mean_candidates is not None and mean_candidates > 0:
        bonf = alpha / mean_candidates
        existential = existential_false_link(alpha, mean_candidates)
    return Calibration(float(grid[j]), float(exceed[j]), feasible, float(alpha), bonf, existential)


def _range_curve(report: AssessmentReport, taus: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    taus = np.asarray(taus, dtype=np.float64)
    if len(taus) == 0:
        raise ValueError("empty threshold range")
    return taus, report.curve(taus)


def worst_case_risk(report: AssessmentReport, taus: Sequence[float] = DEFAULT_TAUS) -> float:
    _, curve = _range_curve(report, taus)
    return float(curve.max())


def integrated_risk(report: AssessmentReport, taus: Sequence[float] = DEFAULT_TAUS) -> float:
    """Trapezoid-rule integral of CVPL-LR over the threshold grid."""
    taus, curve = _range_curve(report, taus)
    return float(np.trapezoid(curve, taus)) if len(taus) > 1 else 0.0


@dataclass(frozen=True, eq=False)
class RiskSurface:
    lambdas: tuple
    taus: np.ndarray
    values: np.ndarray  # len(lambdas) x len(taus)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "tau", "cvpl_lr"])
        for lam, row in zip(self.lambdas, self.values):
            for t, v in zip(self.taus, row):
                w.writerow([lam, f"{t:.2f}", f"{v:.6f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"lambdas": [str(l) for l in self.lambdas], "taus": self.taus.tolist(),
                "values": self.values.tolist()}


def risk_surface(assessments: Mapping, taus: Sequence[float] = DEFAULT_TAUS) -> RiskSurface:
    taus = np.asarray(taus, dtype=np.float64)
    lams = tuple(assessments)
    values = np.array([assessments[l].curve(taus) for l in lams]).reshape(len(lams), len(taus))
    return RiskSurface(lams, taus, values)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to run the linkage pipeline on a dataset pair."""

    scheme: BlockingScheme
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    variance_retained: float = 0.90
    strategy: str = "joint"
    min_components: int = 3
    max_components: int = 50
    options: AssessOptions = field(default_factory=AssessOptions)


def run_pipeline(dor: Dataset, dpr: Dataset, cfg: PipelineConfig, gt=None,
                 options: AssessOptions | None = None):
    """Fit encoder and projection, then assess.  Returns (report, encoder, projection)."""
    enc = fit_encoder(dor, dpr, cfg.encoding)
    a, b = encode(enc, dor), encode(enc, dpr)
    proj = fit_projection(a, b, cfg.variance_retained, cfg.strategy,
                          cfg.min_components, cfg.max_components)
    rep = assess(dor, dpr, cfg.scheme, enc, proj, options or cfg.options, gt)
    return rep, enc, proj


def self_linkage(dataset: Dataset, cfg: PipelineConfig, tau: float) -> tuple[float, AssessmentReport]:
    """Leave-one-out CVPL-LR of a dataset against itself."""
    if len(dataset) < 2:
        raise ValueError("self-linkage needs at least 2 rows")
    opt = replace(cfg.options, exclude_self=True)
    rep, _, _ = run_pipeline(dataset, dataset, cfg, options=opt)
    return rep.cvpl_lr(tau), rep


def _block_members(report: AssessmentReport) -> list[np.ndarray]:
    _, inv = np.unique(report.labels.astype(str), return_inverse=True)
    order = np.argsort(inv, kind="stable")
    cuts = np.flatnonzero(np.diff(inv[order])) + 1
    return np.split(order, cuts)


def resample_indices(report: AssessmentReport, rng: np.random.Generator, block_aware: bool,
                     members: list[np.ndarray] | None = None) -> np.ndarray:
    """Record indices of one bootstrap resample.

    Block-aware resampling draws whole blocks (by original-record block label)
    with replacement, so within-block dependence is kept.
    """
    n = report.n
    if not block_aware:
        return rng.integers(0, n, n)
    members = _block_members(report) if members is None else members
    picks = rng.integers(0, len(members), len(members))
    return np.concatenate([members[p] for p in picks])


def bootstrap_ci(statistic: Callable[[AssessmentReport], float], report: AssessmentReport,
                 B: int = 100, level: float = 0.95, block_aware: bool = True,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile interval; resample b draws from its own substream (seed, b)."""
    if B < 1:
        raise ValueError("B must be >= 1")
    members = _block_members(report) if block_aware else None
    vals = np.empty(B)
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        vals[b] = statistic(report.subset(resample_indices(report, rng, block_aware, members)))
    return _percentile_interval(vals, level)


def bootstrap_cvpl_ci(report: AssessmentReport, tau: float, B: int = 100, level: float = 0.95,
                      block_aware: bool = True, seed: int = 0) -> tuple[float, float]:
    """Same interval as ``bootstrap_ci`` with the CVPL-LR statistic, without building subsets."""
    if B < 1:
        raise ValueError("B must be >= 1")
    linkable = np.nan_to_num(report.max_sim, nan=-np.inf) >= tau
    members = _block_members(report) if block_aware else None
    vals = np.empty(B)
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        idx = resample_indices(report, rng, block_aware, members)
        vals[b] = linkable[idx].mean() if len(idx) else 0.0
    return _percentile_interval(vals, level)


def _percentile_interval(vals: np.ndarray, level: float) -> tuple[float, float]:
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    lo, hi = np.percentile(vals, [50 * (1 - level), 50 * (1 + level)])
    return float(lo), float(hi)
