"""Shared feature encoding: pooled z-scores for numerics, union one-hot for categoricals."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..data import Dataset, SchemaError

DEFAULT_NUMERIC = ("age", "days_after_ad", "hour", "dow")
DEFAULT_CATEGORICAL = ("gender", "region", "place", "brand_product", "channel")

# short names used in configs -> schema attribute names
ALIASES = {"place": "purchase_place", "channel": "ad_channel", "lag": "days_after_ad"}
# features derived from a timestamp column (UTC)
DERIVED = {"hour", "dow"}
TIME_ATTRIBUTE = "purchase_time"


def resolve(name: str) -> str:
    return ALIASES.get(name, name)


def _derived(values: np.ndarray, feature: str) -> np.ndarray:
    t = np.asarray(values, dtype=np.int64)
    if feature == "hour":
        return ((t // 3_600) % 24).astype(np.float64)
    # 1970-01-01 was a Thursday; Monday = 0
    return (((t // 86_400) + 3) % 7).astype(np.float64)


@dataclass(frozen=True)
class EncodingConfig:
    numeric: tuple[str, ...] = DEFAULT_NUMERIC
    categorical: tuple[str, ...] = DEFAULT_CATEGORICAL

    def __post_init__(self):
        object.__setattr__(self, "numeric", tuple(self.numeric))
        object.__setattr__(self, "categorical", tuple(self.categorical))


@dataclass(frozen=True, eq=False)
class Encoder:
    """Fitted encoding shared by both datasets.

    ``column_map`` maps each feature (numeric, derived or categorical) to its
    ``(start, stop)`` span in the encoded matrix; ``source`` maps each feature
    to the raw attribute it is computed from.
    """

    numeric: tuple[str, ...]
    means: np.ndarray
    sds: np.ndarray
    categorical: tuple[str, ...]
    categories: tuple[tuple[str, ...], ...]
    column_map: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)
    qi_names: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return len(self.numeric) + sum(len(c) for c in self.categories)

    def column_names(self) -> list[str]:
        names = list(self.numeric)
        for feat, cats in zip(self.categorical, self.categories):
            names.extend(f"{feat}={c}" for c in cats)
        return names

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.numeric, self.categorical, self.categories)).encode())
        h.update(np.ascontiguousarray(self.means).tobytes())
        h.update(np.ascontiguousarray(self.sds).tobytes())
        return h.hexdigest()[:16]


def _feature_values(dataset: Dataset, feature: str) -> np.ndarray:
    if feature in DERIVED:
        if TIME_ATTRIBUTE not in dataset.schema:
            raise SchemaError(f"derived feature {feature!r} needs {TIME_ATTRIBUTE!r}")
        _check_nulls(dataset, TIME_ATTRIBUTE)
        return _derived(dataset[TIME_ATTRIBUTE], feature)
    attr = resolve(feature)
    if attr not in dataset.schema:
        raise SchemaError(f"encoded attribute {attr!r} not in schema")
    role = dataset.schema[attr].role
    if role == "sensitive":
        raise SchemaError(f"sensitive attribute {attr!r} cannot be encoded")
    if role == "hidden-id":
        raise SchemaError(f"hidden id {attr!r} cannot be encoded")
    _check_nulls(dataset, attr)
    return dataset[attr]


def _check_nulls(dataset: Dataset, attr: str) -> None:
    mask = dataset.is_missing(attr)
    if mask.any():
        row = int(np.flatnonzero(mask)[0]) + 1
        raise SchemaError(f"null value at row {row}, column {attr!r}; the encoder needs complete records")


def fit_encoder(dor: Dataset, dpr: Dataset | None = None,
                config: EncodingConfig | None = None) -> Encoder:
    """Fit pooled statistics on ``dor`` and ``dpr`` together."""
    config = config or EncodingConfig()
    pool = [dor] if dpr is None else [dor, dpr]
    means, sds = [], []
    for feat in config.numeric:
        vals = np.concatenate([np.asarray(_feature_values(d, feat), dtype=np.float64) for d in pool])
        means.append(vals.mean())
        sds.append(vals.std())
    cats = []
    for feat in config.categorical:
        vals = np.concatenate([np.asarray(_feature_values(d, feat), dtype=object) for d in pool])
        cats.append(tuple(sorted({str(v) for v in vals})))
    column_map, source = {}, {}
    pos = 0
    for feat in config.numeric:
        column_map[feat] = (pos, pos + 1)
        source[feat] = TIME_ATTRIBUTE if feat in DERIVED else resolve(feat)
        pos += 1
    for feat, c in zip(config.categorical, cats):
        column_map[feat] = (pos, pos + len(c))
        source[feat] = resolve(feat)
        pos += len(c)
    return Encoder(
        config.numeric, np.array(means, dtype=np.float64), np.array(sds, dtype=np.float64),
        config.categorical, tuple(cats), column_map, source,
        tuple(dor.schema.quasi_identifiers),
    )


def encode(encoder: Encoder, dataset: Dataset) -> np.ndarray:
    """n x d matrix; constant numerics encode as 0, unseen categories as all-zero."""
    n = len(dataset)
    out = np.zeros((n, encoder.dim), dtype=np.float64)
    for j, feat in enumerate(encoder.numeric):
        vals = np.asarray(_feature_values(dataset, feat), dtype=np.float64)
        sd = encoder.sds[j]
        if sd > 0:
            out[:, j] = (vals - encoder.means[j]) / sd
    for feat, cats in zip(encoder.categorical, encoder.categories):
        start, _ = encoder.column_map[feat]
        vals = np.asarray(_feature_values(dataset, feat), dtype=object).astype(str)
        idx = np.searchsorted(np.asarray(cats), vals)
        idx = np.minimum(idx, len(cats) - 1)
        hit = np.asarray(cats)[idx] == vals
        rows = np.flatnonzero(hit)
        out[rows, start + idx[hit]] = 1.0
    return out


def encoding_config(numeric: Sequence[str] | None = None,
                    categorical: Sequence[str] | None = None) -> EncodingConfig:
    return EncodingConfig(
        DEFAULT_NUMERIC if numeric is None else tuple(numeric),
        DEFAULT_CATEGORICAL if categorical is None else tuple(categorical),
    )
