"""Typed tabular datasets, attribute roles, ground truth and their file formats.

Datasets are stored column-wise: numeric columns as ``float64``, categorical
columns as object arrays of ``str`` and timestamps as ``int64`` epoch seconds.
Missing cells are tracked in a separate boolean mask per column so that the
typed arrays never need sentinel values.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

KINDS = ("numeric", "categorical", "timestamp")
ROLES = ("quasi-identifier", "analytical", "sensitive", "hidden-id")
_ROLE_ALIASES = {
    "qi": "quasi-identifier",
    "quasi_identifier": "quasi-identifier",
    "quasi-identifier": "quasi-identifier",
    "analytical": "analytical",
    "sensitive": "sensitive",
    "hidden": "hidden-id",
    "hidden-id": "hidden-id",
    "hidden_id": "hidden-id",
}
NUMERIC_FORMAT = "{:.6f}"


class SchemaError(ValueError):
    """Schema definition or schema/data mismatch."""


class DataParseError(ValueError):
    """A CSV cell could not be parsed; carries the 1-based data row and column."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str
    role: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        role = _ROLE_ALIASES.get(self.role)
        if role is None:
            raise SchemaError(f"attribute {self.name!r}: unknown role {self.role!r}")
        object.__setattr__(self, "role", role)


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        attrs = tuple(
            a if isinstance(a, Attribute) else Attribute(*a) for a in self.attributes
        )
        object.__setattr__(self, "attributes", attrs)
        names = [a.name for a in attrs]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate attribute names: {dupes}")
        hidden = [a.name for a in attrs if a.role == "hidden-id"]
        if len(hidden) > 1:
            raise SchemaError(f"at most one hidden-id attribute allowed, got {hidden}")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def __contains__(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    def __getitem__(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    def with_role(self, role: str) -> list[str]:
        return [a.name for a in self.attributes if a.role == role]

    @property
    def hidden_id(self) -> str | None:
        hidden = self.with_role("hidden-id")
        return hidden[0] if hidden else None

    @property
    def quasi_identifiers(self) -> list[str]:
        return self.with_role("quasi-identifier")


def partition_attributes(schema: AttributeSchema) -> tuple[list[str], list[str], list[str]]:
    """Split the observable attributes into (quasi-identifiers, analytical, sensitive)."""
    return (
        schema.with_role("quasi-identifier"),
        schema.with_role("analytical"),
        schema.with_role("sensitive"),
    )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store.

    ``columns`` maps attribute name to a typed array; ``missing`` maps attribute
    name to a boolean mask (absent key means no missing cells).
    """

    schema: AttributeSchema
    columns: Mapping[str, np.ndarray]
    provenance: str = ""
    missing: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        cols = {}
        nulls = {}
        n = None
        for attr in self.schema.attributes:
            if attr.name not in self.columns:
                raise SchemaError(f"missing column {attr.name!r}")
            col = np.asarray(self.columns[attr.name])
            if col.dtype == object:
                # None cells passed in directly are nulls, like empty CSV fields
                none = np.array([v is None for v in col], dtype=bool)
                if none.any():
                    nulls[attr.name] = none
                    # same placeholders as load_dataset; the mask is authoritative
                    col = np.where(none, "" if attr.kind == "categorical" else 0, col)
            if attr.kind == "numeric":
                col = col.astype(np.float64)
            elif attr.kind == "timestamp":
                col = col.astype(np.int64)
            elif col.dtype.kind == "U":
                col = col.astype(object)
            elif col.dtype != object:
                col = np.array([None if v is None else str(v) for v in col], dtype=object)
            if n is None:
                n = len(col)
            elif len(col) != n:
                raise SchemaError(
                    f"column {attr.name!r} has {len(col)} rows, expected {n}"
                )
            cols[attr.name] = _freeze(col)
        extra = set(self.columns) - set(self.schema.names)
        if extra:
            raise SchemaError(f"columns not in schema: {sorted(extra)}")
        missing = {}
        for name, mask in {**nulls, **self.missing}.items():
            mask = np.asarray(mask, dtype=bool) | nulls.get(name, False)
            if mask.any():
                missing[name] = _freeze(mask)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "missing", missing)

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def n(self) -> int:
        return len(self)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def is_missing(self, name: str) -> np.ndarray:
        return self.missing.get(name, np.zeros(len(self), dtype=bool))

    @property
    def has_missing(self) -> bool:
        return bool(self.missing)

    @property
    def rows(self) -> list[tuple]:
        names = self.schema.names
        out = []
        for i in range(len(self)):
            row = []
            for name in names:
                if name in self.missing and self.missing[name][i]:
                    row.append(None)
                else:
                    v = self.columns[name][i]
                    row.append(v.item() if isinstance(v, np.generic) else v)
            out.append(tuple(row))
        return out

    def take(self, indices: Sequence[int] | np.ndarray, provenance: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.schema,
            {k: v[idx] for k, v in self.columns.items()},
            self.provenance if provenance is None else provenance,
            {k: v[idx] for k, v in self.missing.items()},
        )

    def replace(self, provenance: str | None = None, **columns: np.ndarray) -> "Dataset":
        """Copy with some columns swapped out (missing masks of replaced columns dropped)."""
        cols = dict(self.columns)
        cols.update(columns)
        missing = {k: v for k, v in self.missing.items() if k not in columns}
        return Dataset(
            self.schema, cols, self.provenance if provenance is None else provenance, missing
        )

    def equals(self, other: "Dataset") -> bool:
        if self.schema != other.schema or len(self) != len(other):
            return False
        for name in self.schema.names:
            if not np.array_equal(self.is_missing(name), other.is_missing(name)):
                return False
            a, b = self.columns[name], other.columns[name]
            mask = ~self.is_missing(name)
            if not np.array_equal(a[mask], b[mask]):
                return False
        return True


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """True linkage relation as an (P, 2) array of (original, protected) row indices."""

    pairs: np.ndarray
    n_original: int | None = None
    n_protected: int | None = None

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs):
            order = np.lexsort((pairs[:, 1], pairs[:, 0]))
            pairs = pairs[order]
            if pairs.min() < 0:
                raise ValueError("negative index in ground truth")
            if self.n_original is not None and pairs[:, 0].max() >= self.n_original:
                raise ValueError("original index out of range")
            if self.n_protected is not None and pairs[:, 1].max() >= self.n_protected:
                raise ValueError("protected index out of range")
        object.__setattr__(self, "pairs", _freeze(pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def multiplicity(self) -> str:
        if not len(self.pairs):
            return "one-to-one"
        for col in (0, 1):
            _, counts = np.unique(self.pairs[:, col], return_counts=True)
            if counts.max() > 1:
                return "one-to-many"
        return "one-to-one"

    @property
    def pair_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.pairs}

    def matches_of(self, original: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.pairs[:, 0], [original, original + 1])
        return self.pairs[lo:hi, 1]

    def transpose(self) -> "GroundTruth":
        return GroundTruth(self.pairs[:, ::-1], self.n_protected, self.n_original)

    @classmethod
    def identity(cls, n: int) -> "GroundTruth":
        idx = np.arange(n)
        return cls(np.column_stack([idx, idx]), n, n)


def ground_truth_from_hidden_id(dor: Dataset, dpr: Dataset) -> GroundTruth:
    """Pair every original row with every protected row carrying the same hidden id."""
    hid_or, hid_pr = dor.schema.hidden_id, dpr.schema.hidden_id
    if hid_or is None or hid_pr is None:
        raise SchemaError("both datasets must carry a hidden-id attribute")
    a = np.asarray(dor[hid_or])
    b = np.asarray(dpr[hid_pr])
    order = np.argsort(b, kind="stable")
    b_sorted = b[order]
    lo = np.searchsorted(b_sorted, a, side="left")
    hi = np.searchsorted(b_sorted, a, side="right")
    counts = hi - lo
    rows = np.repeat(np.arange(len(a)), counts)
    cols = np.concatenate([order[l:h] for l, h in zip(lo, hi)]) if counts.sum() else np.empty(0, np.int64)
    return GroundTruth(np.column_stack([rows, cols]), len(dor), len(dpr))


# --- file IO -------------------------------------------------------------------------


def load_schema(path: str | Path) -> AttributeSchema:
    """Read a sidecar schema file with one ``name kind role`` triple per line."""
    attrs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise SchemaError(f"{path}:{lineno}: expected 'name kind role', got {line!r}")
        attrs.append(Attribute(*parts))
    return AttributeSchema(tuple(attrs))


def save_schema(schema: AttributeSchema, path: str | Path) -> None:
    lines = [f"{a.name} {a.kind} {a.role}" for a in schema.attributes]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_cell(text: str, kind: str, row: int, column: str):
    if kind == "categorical":
        return text
    try:
        if kind == "numeric":
            return float(text)
        return int(text)
    except ValueError:
        what = "numeric" if kind == "numeric" else "timestamp (integer epoch seconds)"
        raise DataParseError(f"cannot parse {text!r} as {what}", row, column) from None


def load_dataset(path: str | Path, schema: AttributeSchema, provenance: str | None = None) -> Dataset:
    """Parse a header-bearing UTF-8 CSV; columns are matched to the schema by name."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataParseError("empty file") from None
        if sorted(header) != sorted(schema.names) or len(set(header)) != len(header):
            raise SchemaError(
                f"header {header} does not match schema attributes {schema.names}"
            )
        pos = {name: header.index(name) for name in schema.names}
        values: dict[str, list] = {name: [] for name in schema.names}
        missing: dict[str, list] = {name: [] for name in schema.names}
        for r, rec in enumerate(reader, 1):
            if len(rec) != len(header):
                raise DataParseError(
                    f"expected {len(header)} fields, got {len(rec)}", r
                )
            for attr in schema.attributes:
                text = rec[pos[attr.name]]
                if text == "":
                    missing[attr.name].append(True)
                    values[attr.name].append(
                        "" if attr.kind == "categorical" else 0
                    )
                else:
                    missing[attr.name].append(False)
                    values[attr.name].append(_parse_cell(text, attr.kind, r, attr.name))
    cols = {}
    for attr in schema.attributes:
        v = values[attr.name]
        if attr.kind == "numeric":
            cols[attr.name] = np.array(v, dtype=np.float64)
        elif attr.kind == "timestamp":
            cols[attr.name] = np.array(v, dtype=np.int64)
        else:
            cols[attr.name] = np.array(v, dtype=object)
    return Dataset(
        schema,
        cols,
        str(path) if provenance is None else provenance,
        {k: np.array(v, dtype=bool) for k, v in missing.items()},
    )


def _format_cell(value, kind: str) -> str:
    if kind == "numeric":
        return NUMERIC_FORMAT.format(float(value))
    if kind == "timestamp":
        return str(int(value))
    return str(value)


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    names = dataset.schema.names
    writer.writerow(names)
    kinds = [dataset.schema[n].kind for n in names]
    cols = [dataset[n] for n in names]
    masks = [dataset.is_missing(n) for n in names]
    for i in range(len(dataset)):
        writer.writerow(
            "" if m[i] else _format_cell(c[i], k) for c, k, m in zip(cols, kinds, masks)
        )
    return buf.getvalue()


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(dataset_to_csv(dataset), encoding="utf-8", newline="")


def save_ground_truth(gt: GroundTruth, path: str | Path) -> None:
    lines = ["original,protected"] + [f"{a},{b}" for a, b in gt.pairs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ground_truth(path: str | Path, n_original: int | None = None,
                      n_protected: int | None = None) -> GroundTruth:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["original", "protected"]:
            raise DataParseError(f"unexpected ground-truth header {header}")
        pairs = []
        for r, rec in enumerate(reader, 1):
            try:
                pairs.append((int(rec[0]), int(rec[1])))
            except (ValueError, IndexError):
                raise DataParseError(f"bad index pair {rec}", r) from None
    return GroundTruth(np.array(pairs, dtype=np.int64).reshape(-1, 2), n_original, n_protected)


def make_schema(attrs: Iterable[tuple[str, str, str]]) -> AttributeSchema:
    """Build a schema from ``(name, kind, role)`` triples."""
    return AttributeSchema(tuple(Attribute(*a) for a in attrs))
