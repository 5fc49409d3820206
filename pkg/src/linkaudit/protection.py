"""Protection mechanisms: global-recoding k-anonymity, perturbation, copula synthesis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .data import Dataset, GroundTruth, SchemaError

AGE, GENDER, REGION, TIME = "age", "gender", "region", "purchase_time"
K_ANON_QIS = (AGE, GENDER, REGION)
HOUR, DAY, WEEK = 3_600, 86_400, 604_800
# weeks start Monday 00:00 UTC (1970-01-05)
_WEEK_OFFSET = 4 * DAY

# (age width, region level, time granularity), finest first
LADDER = (
    (5, 2, DAY),
    (10, 2, DAY),
    (10, 1, DAY),
    (20, 1, DAY),
    (20, 1, WEEK),
    (30, 1, WEEK),
)
SUPPRESSION_BUDGET = 0.02

NOISE_LEVELS = {
    "low": {"age": 1, "time": 3_600, "swap": 0.05},
    "medium": {"age": 3, "time": 86_400, "swap": 0.15},
    "high": {"age": 5, "time": 604_800, "swap": 0.30},
}


def _round_time(t: np.ndarray, step: int) -> np.ndarray:
    off = _WEEK_OFFSET if step % WEEK == 0 else 0
    return ((np.asarray(t, dtype=np.int64) - off) // step) * step + off


@dataclass(frozen=True)
class GeneralizationMap:
    """Global recoding applied to a release.

    Age becomes the midpoint of its ``age_width`` bin, region is cut to
    ``region_level`` and timestamps are floored to ``time_granularity`` seconds.
    """

    age_width: int = 5
    region_level: int = 2
    time_granularity: int = HOUR
    position: int = 0
    suppressed: tuple[int, ...] = ()

    def __post_init__(self):
        if self.region_level not in (1, 2):
            raise ValueError("region_level must be 1 or 2")
        if self.age_width <= 0 or self.time_granularity <= 0:
            raise ValueError("generalization widths must be positive")

    def apply(self, dataset: Dataset) -> Dataset:
        """Recode a dataset (no suppression); also used to align originals for agreement tests."""
        cols = {}
        schema = dataset.schema
        if AGE in schema:
            w = self.age_width
            cols[AGE] = np.floor(dataset[AGE] / w) * w + w / 2
        if REGION in schema and self.region_level == 1:
            cols[REGION] = np.array([str(v).split("/", 1)[0] for v in dataset[REGION]], dtype=object)
        if TIME in schema:
            cols[TIME] = _round_time(dataset[TIME], self.time_granularity)
        return dataset.replace(**cols)

    def qi_view(self, dataset: Dataset) -> Dataset:
        """Originals recoded on the quasi-identifiers only, as an auditor reading the release would.

        Timestamps are left alone: the recoding of an analytical attribute is
        part of what the audit measures.
        """
        return GeneralizationMap(self.age_width, self.region_level, 1).apply(dataset)

    def describe(self) -> str:
        names = {HOUR: "hour", DAY: "day", WEEK: "week"}
        g = names.get(self.time_granularity, f"{self.time_granularity}s")
        return (f"ladder position L{self.position}: age width {self.age_width}, "
                f"region level {self.region_level}, time rounded to {g}; "
                f"{len(self.suppressed)} rows suppressed")


def _class_keys(dataset: Dataset, qi_names: Sequence[str]) -> np.ndarray:
    for q in qi_names:
        if q not in dataset.schema:
            raise SchemaError(f"unknown attribute {q!r}")
    if not qi_names:
        raise ValueError("qi_names must be nonempty")
    parts = [np.asarray(dataset[q]).astype(str) for q in qi_names]
    return np.array(["\x1f".join(t) for t in zip(*parts)], dtype=object)


def equivalence_class_sizes(dataset: Dataset, qi_names: Sequence[str]) -> np.ndarray:
    """Size of each row's equivalence class."""
    keys = _class_keys(dataset, qi_names)
    _, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    return counts[inv]


def min_equivalence_class(dataset: Dataset, qi_names: Sequence[str]) -> int:
    """Smallest number of rows sharing identical values on ``qi_names``."""
    keys = _class_keys(dataset, qi_names)
    _, counts = np.unique(keys, return_counts=True)
    return int(counts.min()) if len(counts) else 0


def k_anonymize(dataset: Dataset, k: int, budget: float = SUPPRESSION_BUDGET,
                ladder: Sequence[tuple[int, int, int]] = LADDER
                ) -> tuple[Dataset, GeneralizationMap, GroundTruth]:
    """Global recoding along ``ladder`` followed by suppression of undersized classes.

    The chosen point is the least coarse one whose undersized classes cover at
    most ``budget`` of the rows (the coarsest point if none qualifies).
    Surviving rows keep their order, so the ground truth pairs each surviving
    release row with its source row.
    """
    n = len(dataset)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows ({n})")
    for q in (*K_ANON_QIS, TIME):
        if q not in dataset.schema:
            raise SchemaError(f"k-anonymity needs attribute {q!r}")
    chosen = None
    for pos, (w, lvl, g) in enumerate(ladder):
        gmap = GeneralizationMap(w, lvl, g, pos)
        released = gmap.apply(dataset)
        sizes = equivalence_class_sizes(released, K_ANON_QIS)
        small = sizes < k
        if small.mean() <= budget or pos == len(ladder) - 1:
            chosen = (gmap, released, small)
            break
    gmap, released, small = chosen
    keep = np.flatnonzero(~small)
    if len(keep) == 0:
        raise ValueError(f"no equivalence class reaches k={k}")
    out = released.take(keep, provenance=f"k-anonymity k={k}")
    gmap = GeneralizationMap(gmap.age_width, gmap.region_level, gmap.time_granularity,
                             gmap.position, tuple(int(i) for i in np.flatnonzero(small)))
    got = min_equivalence_class(out, K_ANON_QIS)
    if got < k:
        raise AssertionError(f"k-anonymity check failed: min class {got} < {k}")
    gt = GroundTruth(np.column_stack([keep, np.arange(len(keep))]), n, len(keep))
    return out, gmap, gt


def _categorical_columns(dataset: Dataset) -> list[str]:
    return [a.name for a in dataset.schema.attributes
            if a.kind == "categorical" and a.role != "hidden-id"]


def perturb(dataset: Dataset, level: str, seed: int,
            levels: dict | None = None) -> tuple[Dataset, GroundTruth]:
    """Additive noise on age and time plus per-cell categorical swaps."""
    levels = levels or NOISE_LEVELS
    if level not in levels:
        raise ValueError(f"unknown noise level {level!r}; expected one of {sorted(levels)}")
    spec = levels[level]
    rng = np.random.default_rng([seed, 0xB0B])
    n = len(dataset)
    cols = {}
    if AGE in dataset.schema:
        a = int(spec["age"])
        cols[AGE] = dataset[AGE] + rng.integers(-a, a + 1, n)
    if TIME in dataset.schema:
        t = int(spec["time"])
        cols[TIME] = dataset[TIME] + rng.integers(-t, t + 1, n)
    p = float(spec.get("swap", 0.0))
    for name in _categorical_columns(dataset):
        col = dataset[name]
        swap = rng.random(n) < p
        donors = rng.integers(0, n, n)
        new = col.copy()
        new[swap] = col[donors[swap]]
        cols[name] = new
    out = dataset.replace(provenance=f"perturb {level}", **cols)
    return out, GroundTruth.identity(n)


def _category_order(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cats, counts = np.unique(values.astype(str), return_counts=True)
    order = np.lexsort((cats, -counts))
    return cats[order], counts[order]


def synthesize(dataset: Dataset, rho: float, seed: int) -> tuple[Dataset, GroundTruth]:
    """Gaussian-copula release with per-row correlation retention ``rho``.

    Each source row's normal scores ``z`` are blended with fresh correlated
    noise, ``rho * z + sqrt(1 - rho^2) * eps``, and mapped back through the
    empirical marginals.  Row i of the output derives from source row i.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    rng = np.random.default_rng([seed, 0xC0C])
    n = len(dataset)
    names = [a.name for a in dataset.schema.attributes if a.role != "hidden-id"]
    kinds = {a.name: a.kind for a in dataset.schema.attributes}
    constant, modelled = [], []
    for name in names:
        if len(np.unique(np.asarray(dataset[name]).astype(str))) <= 1:
            constant.append(name)
        else:
            modelled.append(name)
    z = np.zeros((n, len(modelled)))
    cat_info = {}
    for j, name in enumerate(modelled):
        col = dataset[name]
        if kinds[name] == "categorical":
            cats, counts = _category_order(col)
            cum = np.concatenate([[0.0], np.cumsum(counts) / n])
            pos = np.searchsorted(cats, col.astype(str), sorter=np.argsort(cats))
            code = np.argsort(cats)[pos]
            u = cum[code] + rng.random(n) * (cum[code + 1] - cum[code])
            cat_info[name] = (cats, cum)
        else:
            ranks = stats.rankdata(np.asarray(col, dtype=np.float64), method="ordinal")
            u = (ranks - 0.5) / n
        z[:, j] = stats.norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    sigma = np.corrcoef(z, rowvar=False) if len(modelled) > 1 else np.ones((1, 1))
    sigma = np.atleast_2d(sigma)
    eps = rng.multivariate_normal(np.zeros(len(modelled)), sigma, size=n, method="eigh")
    z_new = rho * z + np.sqrt(max(0.0, 1.0 - rho * rho)) * eps
    u_new = stats.norm.cdf(z_new)
    cols = {}
    for j, name in enumerate(modelled):
        col = dataset[name]
        u = u_new[:, j]
        if kinds[name] == "categorical":
            cats, cum = cat_info[name]
            idx = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(cats) - 1)
            cols[name] = cats[idx].astype(object)
        else:
            sorted_vals = np.sort(np.asarray(col))
            idx = np.clip(np.floor(u * n).astype(np.int64), 0, n - 1)
            cols[name] = sorted_vals[idx]
    out = dataset.replace(provenance=f"synthetic rho={rho}", **cols)
    return out, GroundTruth.identity(n)
