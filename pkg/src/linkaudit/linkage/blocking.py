"""Blocking schemes: generalized quasi-identifier tuples as block labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..data import Dataset, GroundTruth, SchemaError

GENERALIZATIONS = ("identity", "age-bin", "region-level", "time-round")
TIME_GRANULARITY = {"hour": 3_600, "day": 86_400, "week": 604_800}
# 1970-01-05 was a Monday; weeks start on Monday 00:00 UTC
_WEEK_OFFSET = 4 * 86_400


@dataclass(frozen=True)
class BlockKey:
    attribute: str
    generalization: str = "identity"
    param: float | int | None = None

    def __post_init__(self):
        if self.generalization not in GENERALIZATIONS:
            raise ValueError(f"unknown generalization {self.generalization!r}")
        if self.generalization == "age-bin" and not (self.param and self.param > 0):
            raise ValueError("age-bin needs a positive width")
        if self.generalization == "region-level" and self.param not in (1, 2):
            raise ValueError("region-level must be 1 or 2")
        if self.generalization == "time-round":
            param = TIME_GRANULARITY.get(self.param, self.param)
            if not (isinstance(param, (int, np.integer)) and param > 0):
                raise ValueError(f"bad time granularity {self.param!r}")
            object.__setattr__(self, "param", int(param))

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Generalized values as strings."""
        g = self.generalization
        if g == "age-bin":
            w = self.param
            floors = np.floor(np.asarray(values, dtype=float) / w) * w
            return np.array([_num(v) for v in floors], dtype=object)
        if g == "region-level":
            vals = np.asarray(values, dtype=object)
            if self.param == 1:
                return np.array([str(v).split("/", 1)[0] for v in vals], dtype=object)
            return vals.astype(str).astype(object)
        if g == "time-round":
            t = np.asarray(values, dtype=np.int64)
            step, off = self.param, self._offset()
            return np.array([str(v) for v in ((t - off) // step) * step + off], dtype=object)
        vals = np.asarray(values)
        if vals.dtype.kind == "f":
            return np.array([_num(v) for v in vals], dtype=object)
        return vals.astype(str).astype(object)

    def coarsens(self, finer: "BlockKey") -> bool:
        """True when this key's partition is a coarsening of ``finer``'s on the same attribute."""
        if self.attribute != finer.attribute:
            return False
        if finer.generalization == "identity":
            return True
        if self.generalization != finer.generalization:
            return False
        if self.generalization == "region-level":
            return self.param <= finer.param
        # coarse bin edges must be a subset of the fine bin edges
        ratio = self.param / finer.param
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-12:
            return False
        if self.generalization == "time-round":
            return (self._offset() - finer._offset()) % finer.param == 0
        return True

    def _offset(self) -> int:
        return _WEEK_OFFSET if self.param % TIME_GRANULARITY["week"] == 0 else 0

    def describe(self) -> str:
        if self.generalization == "identity":
            return self.attribute
        return f"{self.attribute}:{self.generalization}={self.param}"


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


@dataclass(frozen=True)
class BlockingScheme:
    keys: tuple[BlockKey, ...] = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "keys", tuple(self.keys))
        if not self.label:
            object.__setattr__(
                self, "label", "+".join(k.describe() for k in self.keys) or "single-block"
            )

    def drop(self, attribute: str, label: str | None = None) -> "BlockingScheme":
        return BlockingScheme(tuple(k for k in self.keys if k.attribute != attribute), label or "")

    def structurally_relaxes(self, finer: "BlockingScheme") -> bool:
        """True when every key here coarsens some key of ``finer`` (keys may be dropped)."""
        return all(any(k.coarsens(f) for f in finer.keys) for k in self.keys)


def parse_key(token: str) -> BlockKey:
    """Parse the config key syntax.

    ``age_bin[:width]``, ``region_level[:1|2]``, ``time_round[:hour|day|week]``
    and ``<attribute>`` (identity).  ``region_level2`` / ``region_level1`` are
    accepted as spelled in experiment logs.
    """
    token = token.strip()
    name, _, arg = token.partition(":")
    if name == "age_bin":
        return BlockKey("age", "age-bin", float(arg) if arg else 10)
    if name in ("region_level", "region_level1", "region_level2"):
        level = int(arg) if arg else (2 if name.endswith("2") else 1)
        return BlockKey("region", "region-level", level)
    if name == "time_round":
        return BlockKey("purchase_time", "time-round", arg or "day")
    if arg:
        raise ValueError(f"identity key {name!r} takes no argument")
    return BlockKey(name)


def scheme_from_tokens(tokens: Sequence[str], label: str = "") -> BlockingScheme:
    return BlockingScheme(tuple(parse_key(t) for t in tokens), label)


def assign_blocks(dataset: Dataset, scheme: BlockingScheme) -> np.ndarray:
    """Block label per row: ``|``-joined generalized key values (``*`` for no keys)."""
    if not scheme.keys:
        return np.full(len(dataset), "*", dtype=object)
    parts = []
    for key in scheme.keys:
        if key.attribute not in dataset.schema:
            raise SchemaError(f"blocking key {key.attribute!r} not in schema")
        if dataset.schema[key.attribute].role != "quasi-identifier":
            raise SchemaError(f"blocking key {key.attribute!r} is not a quasi-identifier")
        parts.append(key.apply(dataset[key.attribute]))
    if len(parts) == 1:
        return parts[0]
    return np.array(["|".join(t) for t in zip(*parts)], dtype=object)


@dataclass(frozen=True, eq=False)
class BlockIndex:
    """Label -> sorted row indices, for constant-time candidate lookup."""

    labels: np.ndarray
    groups: dict

    @classmethod
    def build(cls, labels: np.ndarray) -> "BlockIndex":
        labels = np.asarray(labels, dtype=object)
        groups: dict[str, list[int]] = {}
        for i, lab in enumerate(labels):
            groups.setdefault(lab, []).append(i)
        return cls(labels, {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()})

    def __getitem__(self, label: str) -> np.ndarray:
        return self.groups.get(label, _EMPTY)

    def sizes(self) -> np.ndarray:
        return np.array([len(v) for v in self.groups.values()], dtype=np.int64)


_EMPTY = np.empty(0, dtype=np.int64)
_EMPTY.setflags(write=False)


def candidate_set(x: int, dor_labels: np.ndarray, dpr_index: BlockIndex) -> np.ndarray:
    """Protected rows sharing original row ``x``'s block."""
    return dpr_index[dor_labels[x]]


def blocking_recall(scheme: BlockingScheme, dor: Dataset, dpr: Dataset, gt: GroundTruth) -> float:
    """Fraction of true pairs that share a block."""
    if len(gt) == 0:
        raise ValueError("ground truth is empty")
    a = assign_blocks(dor, scheme)
    b = assign_blocks(dpr, scheme)
    return float(np.mean(a[gt.pairs[:, 0]] == b[gt.pairs[:, 1]]))


def is_relaxation(s1: BlockingScheme, s2: BlockingScheme, datasets: Sequence[Dataset]) -> bool:
    """Empirical check that co-blocking under ``s1`` implies co-blocking under ``s2``.

    Pools the rows of all ``datasets``; within every ``s1`` block all rows must
    carry a single ``s2`` label.
    """
    l1 = np.concatenate([assign_blocks(d, s1) for d in datasets])
    l2 = np.concatenate([assign_blocks(d, s2) for d in datasets])
    seen: dict[str, str] = {}
    for a, b in zip(l1, l2):
        prev = seen.setdefault(a, b)
        if prev != b:
            return False
    return True
