"""Structural feature contributions of the projected similarity space.

Contribution of a raw attribute ``f`` is

    sum_k evr_k * sum_{j in columns(f)} loading[k, j] ** 2

normalized over attributes.  This describes how the retained components are
built, not the marginal effect of an attribute on linkage.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset
from .evaluation import PipelineConfig
from .linkage.encoding import Encoder, encode, fit_encoder
from .linkage.projection import Projection, fit_projection

# reporting groups; anything unlisted reports under its own name
GROUPS = {
    "hour": "temporal patterns",
    "dow": "temporal patterns",
    "days_after_ad": "response timing",
    "ad_channel": "ad channel",
    "purchase_place": "purchase place",
    "brand_product": "product preferences",
}


@dataclass(frozen=True)
class ContributionReport:
    features: tuple[str, ...]
    contribution: np.ndarray      # per encoder feature, sums to 1
    attributes: dict              # raw attribute -> fraction
    category: dict                # "QI" / "non-QI" -> fraction
    groups: dict                  # reporting group -> fraction
    roles: dict                   # feature -> "QI" / "non-QI"
    sd: np.ndarray | None = None

    def with_sd(self, sd: np.ndarray) -> "ContributionReport":
        return ContributionReport(self.features, self.contribution, self.attributes,
                                  self.category, self.groups, self.roles, np.asarray(sd))

    def to_dict(self) -> dict:
        return {
            "features": {f: float(c) for f, c in zip(self.features, self.contribution)},
            "attributes": self.attributes,
            "category": self.category,
            "groups": self.groups,
            "sd": None if self.sd is None else {f: float(s) for f, s in zip(self.features, self.sd)},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["attribute", "contribution", "sd", "category"])
        for i, f in enumerate(self.features):
            sd = "" if self.sd is None else f"{self.sd[i]:.6f}"
            w.writerow([f, f"{self.contribution[i]:.6f}", sd, self.roles[f]])
        return buf.getvalue()


def _group(feature: str, source: str) -> str:
    return GROUPS.get(feature) or GROUPS.get(source) or source


def feature_contribution(projection: Projection, encoder: Encoder,
                         qi_names: Sequence[str] | None = None) -> ContributionReport:
    """Explained-variance weighted squared loadings, aggregated per feature.

    ``qi_names`` defaults to the quasi-identifiers of the schema the encoder
    was fitted on.
    """
    if projection.strategy == "identity" or np.isnan(projection.explained_variance_ratio).any():
        raise ValueError("feature contributions are undefined for the identity projection")
    if projection.dim != encoder.dim:
        raise ValueError(f"projection expects {projection.dim} columns, encoder yields {encoder.dim}")
    evr = np.asarray(projection.explained_variance_ratio, dtype=np.float64)
    col_weight = (evr[:, None] * projection.components ** 2).sum(axis=0)
    feats = tuple(encoder.column_map)
    raw = np.array([col_weight[slice(*encoder.column_map[f])].sum() for f in feats])
    total = raw.sum()
    if total <= 0:
        raise ValueError("projection carries no variance")
    contrib = raw / total
    qis = set(qi_names if qi_names is not None else encoder.qi_names)
    roles = {f: "QI" if encoder.source[f] in qis else "non-QI" for f in feats}
    attributes: dict[str, float] = {}
    groups: dict[str, float] = {}
    category = {"QI": 0.0, "non-QI": 0.0}
    for f, c in zip(feats, contrib):
        src = encoder.source[f]
        attributes[src] = attributes.get(src, 0.0) + float(c)
        g = _group(f, src)
        groups[g] = groups.get(g, 0.0) + float(c)
        category[roles[f]] += float(c)
    return ContributionReport(feats, contrib, attributes, category, groups, roles)


def fit_contribution(dor: Dataset, dpr: Dataset, cfg: PipelineConfig) -> ContributionReport:
    enc = fit_encoder(dor, dpr, cfg.encoding)
    a, b = encode(enc, dor), encode(enc, dpr)
    proj = fit_projection(a, b, cfg.variance_retained, cfg.strategy,
                          cfg.min_components, cfg.max_components)
    return feature_contribution(proj, enc)


def contribution_stability(dor: Dataset, dpr: Dataset, cfg: PipelineConfig, B: int = 100,
                           seed: int = 0, streams: Sequence[int] | None = None) -> np.ndarray:
    """Per-feature standard deviation of contributions over ``B`` record-bootstrap refits.

    Resample ``b`` draws from substream ``(seed, streams[b])``; ``streams``
    defaults to ``range(B)``.
    """
    if B < 2:
        raise ValueError("B must be >= 2")
    streams = list(range(B)) if streams is None else list(streams)
    if len(streams) != B:
        raise ValueError("streams must have length B")
    rows = []
    for s in streams:
        rng = np.random.default_rng([seed, int(s)])
        ia = rng.integers(0, len(dor), len(dor))
        ib = rng.integers(0, len(dpr), len(dpr))
        rows.append(fit_contribution(dor.take(ia), dpr.take(ib), cfg).contribution)
    return np.asarray(rows).std(axis=0, ddof=1)
