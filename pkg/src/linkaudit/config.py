"""Experiment configuration file.

The file has the sections ``data``, ``blocking``, ``vectorization``,
``projection``, ``similarity``, ``thresholds``, ``protection``, ``evaluation``
and ``scalability``.  Omitted keys take the defaults below; unknown keys are
rejected with their full key path.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .evaluation import PipelineConfig
from .linkage.assess import AssessOptions
from .linkage.blocking import BlockingScheme, scheme_from_tokens
from .linkage.encoding import EncodingConfig
from .protection import NOISE_LEVELS, SUPPRESSION_BUDGET
from .simulator import SimConfig


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted key path when known."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


DEFAULTS: dict[str, Any] = {
    "data": {
        "n_records": 10000,
        "seed": 42,
        "outlier_fraction": [0, 0.01, 0.05],
        "age_distribution": "truncated_normal",
        "age_mean": 42,
        "age_std": 15,
        "age_min": 18,
        "age_max": 80,
        "regions": {"level1": ["North", "South", "East", "West"],
                    "level2": ["Urban", "Suburban", "Rural"]},
        "channels": ["Search", "Social", "Video", "Display", "Email"],
        "channel_weights": [0.3, 0.25, 0.2, 0.15, 0.1],
        "products": 50,
        "product_distribution": "zipf",
        "product_alpha": 1.5,
    },
    "blocking": {
        "quasi_identifiers": ["age_bin", "region_level", "gender"],
        "age_bin_width": 10,
        "region_level": 1,
        # progressive ladder, finest first; each step is a list of key tokens
        "ladder": [
            ["age_bin:10", "region_level:2", "gender"],
            ["age_bin:10", "region_level:1", "gender"],
            ["age_bin:10", "gender"],
            ["age_bin:10", "gender"],
        ],
    },
    "vectorization": {
        "numeric": ["age", "days_after_ad", "hour", "dow"],
        "categorical": ["gender", "region", "place", "brand_product", "channel"],
        "encoding": "one_hot",
        "scaling": "z_score",
    },
    "projection": {
        "method": "pca",
        "variance_retained": 0.90,
        "min_components": 3,
        "max_components": 50,
        "fit_on": "joint",
    },
    "similarity": {"metric": "cosine"},
    "thresholds": {"range": [0.70, 0.99], "step": 0.01, "default": 0.90},
    "protection": {
        "k_anonymity": [2, 3, 5, 7, 10, 15, 20, 30, 50],
        "noise_levels": copy.deepcopy(NOISE_LEVELS),
        "synthetic_correlation": [0.95, 0.90, 0.85, 0.80, 0.75, 0.70, 0.60],
        "suppression_budget": SUPPRESSION_BUDGET,
    },
    "evaluation": {
        "seeds": 5,
        "bootstrap": 100,
        "confidence_level": 0.95,
        "alpha": 0.05,
        "non_match_samples": 100,
    },
    "scalability": {
        "max_block_size": 5000,
        "ann_threshold": 10000,
        "ann_method": "faiss",
        "ann_nprobe": 10,
        "chunk_size": 1024,
        "workers": 1,
    },
}

# sub-mappings whose keys are free-form (noise level names)
_OPEN_MAPS = {"protection.noise_levels"}
_FIT_ON = {"joint": "joint", "source": "source-only", "source-only": "source-only",
           "target": "target-only", "target-only": "target-only"}
_METRICS = {"cosine": "cosine", "euclidean": "euclidean", "weighted_dot": "weighted-dot",
            "weighted-dot": "weighted-dot"}


def _merge(base: dict, override: Any, path: str) -> dict:
    if not isinstance(override, dict):
        raise ConfigError(f"expected a mapping, got {type(override).__name__}", path)
    out = copy.deepcopy(base)
    for key, val in override.items():
        kp = f"{path}.{key}" if path else str(key)
        if path in _OPEN_MAPS:
            out[key] = val
        elif key not in base:
            raise ConfigError("unknown key", kp)
        elif isinstance(base[key], dict) and kp not in ("protection.synthetic_correlation",):
            out[key] = _merge(base[key], val if val is not None else {}, kp)
        else:
            out[key] = val
    return out


def _num(v: Any, path: str, lo: float | None = None, hi: float | None = None,
         integer: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", path)
    if integer and int(v) != v:
        raise ConfigError(f"expected an integer, got {v!r}", path)
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(f"value {v!r} outside [{lo}, {hi}]", path)
    return int(v) if integer else float(v)


def _list(v: Any, path: str) -> list:
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError("expected a nonempty list", path)
    return list(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; ``raw`` holds the fully resolved mapping."""

    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        _validate(self.raw)

    def section(self, name: str) -> dict:
        return self.raw[name]

    @property
    def seed(self) -> int:
        return int(self.raw["data"]["seed"])

    def with_seed(self, seed: int) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["data"]["seed"] = int(seed)
        return ExperimentConfig(raw)

    def sim_config(self, seed: int | None = None, outlier_fraction: float = 0.0) -> SimConfig:
        d = self.raw["data"]
        return SimConfig(
            n_records=int(d["n_records"]),
            seed=self.seed if seed is None else int(seed),
            age_mean=float(d["age_mean"]), age_std=float(d["age_std"]),
            age_min=float(d["age_min"]), age_max=float(d["age_max"]),
            region_level1=tuple(d["regions"]["level1"]),
            region_level1_weights=_even_or_default(d["regions"]["level1"],
                                                   SimConfig.region_level1_weights),
            region_level2=tuple(d["regions"]["level2"]),
            region_level2_weights=_even_or_default(d["regions"]["level2"],
                                                   SimConfig.region_level2_weights),
            channels=tuple(d["channels"]),
            channel_weights=tuple(float(w) for w in d["channel_weights"]),
            lag_mean_days=_lags(len(d["channels"])),
            n_products=int(d["products"]),
            product_zipf_alpha=float(d["product_alpha"]),
            outlier_fraction=float(outlier_fraction),
        )

    @property
    def outlier_fractions(self) -> list[float]:
        return [float(p) for p in self.raw["data"]["outlier_fraction"]]

    def blocking_scheme(self) -> BlockingScheme:
        b = self.raw["blocking"]
        tokens = []
        for q in b["quasi_identifiers"]:
            if q == "age_bin":
                tokens.append(f"age_bin:{b['age_bin_width']}")
            elif q == "region_level":
                tokens.append(f"region_level:{b['region_level']}")
            else:
                tokens.append(q)
        return scheme_from_tokens(tokens, label="default")

    def ladder(self) -> list[BlockingScheme]:
        return [scheme_from_tokens(step, label=f"B{i + 1}")
                for i, step in enumerate(self.raw["blocking"]["ladder"])]

    def taus(self) -> np.ndarray:
        lo, hi = self.raw["thresholds"]["range"]
        step = self.raw["thresholds"]["step"]
        n = int(round((hi - lo) / step)) + 1
        return np.round(lo + step * np.arange(n), 10)

    @property
    def tau(self) -> float:
        return float(self.raw["thresholds"]["default"])

    def assess_options(self, seed: int = 0) -> AssessOptions:
        s = self.raw["scalability"]
        return AssessOptions(
            similarity=_METRICS[self.raw["similarity"]["metric"]],
            chunk_size=int(s["chunk_size"]),
            max_block_size=None if s["max_block_size"] is None else int(s["max_block_size"]),
            non_match_samples=int(self.raw["evaluation"]["non_match_samples"]),
            seed=int(seed),
            workers=int(s["workers"]),
        )

    def pipeline(self, seed: int = 0, scheme: BlockingScheme | None = None) -> PipelineConfig:
        v, p = self.raw["vectorization"], self.raw["projection"]
        strategy = "identity" if p["method"] == "none" else _FIT_ON[p["fit_on"]]
        return PipelineConfig(
            scheme=scheme or self.blocking_scheme(),
            encoding=EncodingConfig(tuple(v["numeric"]), tuple(v["categorical"])),
            variance_retained=float(p["variance_retained"]),
            strategy=strategy,
            min_components=int(p["min_components"]),
            max_components=int(p["max_components"]),
            options=self.assess_options(seed),
        )

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)


def _even_or_default(labels, default) -> tuple[float, ...]:
    if len(labels) == len(default):
        return tuple(default)
    return tuple([1.0 / len(labels)] * len(labels))


def _lags(n: int) -> tuple[float, ...]:
    return tuple(float(i + 1) for i in range(n))


def _validate(raw: dict) -> None:
    d = raw["data"]
    _num(d["n_records"], "data.n_records", 1, integer=True)
    _num(d["seed"], "data.seed", 0, integer=True)
    for i, p in enumerate(_list(d["outlier_fraction"], "data.outlier_fraction")):
        _num(p, f"data.outlier_fraction[{i}]", 0, 0.5)
    if d["age_distribution"] != "truncated_normal":
        raise ConfigError("only truncated_normal is supported", "data.age_distribution")
    if d["product_distribution"] != "zipf":
        raise ConfigError("only zipf is supported", "data.product_distribution")
    if len(_list(d["channels"], "data.channels")) != len(_list(d["channel_weights"], "data.channel_weights")):
        raise ConfigError("channels and channel_weights differ in length", "data.channel_weights")
    _num(d["products"], "data.products", 1, integer=True)
    _num(d["product_alpha"], "data.product_alpha", 0)
    for key in ("level1", "level2"):
        _list(d["regions"][key], f"data.regions.{key}")

    b = raw["blocking"]
    for q in b["quasi_identifiers"]:
        if q not in ("age_bin", "region_level", "gender", "age", "region"):
            raise ConfigError(f"unknown blocking key {q!r}", "blocking.quasi_identifiers")
    _num(b["age_bin_width"], "blocking.age_bin_width", 1)
    if b["region_level"] not in (1, 2):
        raise ConfigError("region_level must be 1 or 2", "blocking.region_level")
    for i, step in enumerate(_list(b["ladder"], "blocking.ladder")):
        try:
            scheme_from_tokens(step if isinstance(step, list) else [step])
        except ValueError as exc:
            raise ConfigError(str(exc), f"blocking.ladder[{i}]") from None

    v = raw["vectorization"]
    if v["encoding"] != "one_hot":
        raise ConfigError("only one_hot encoding is supported", "vectorization.encoding")
    if v["scaling"] != "z_score":
        raise ConfigError("only z_score scaling is supported", "vectorization.scaling")

    p = raw["projection"]
    if p["method"] not in ("pca", "none"):
        raise ConfigError("method must be pca or none", "projection.method")
    _num(p["variance_retained"], "projection.variance_retained", 0, 1)
    lo = _num(p["min_components"], "projection.min_components", 1, integer=True)
    hi = _num(p["max_components"], "projection.max_components", 1, integer=True)
    if lo > hi:
        raise ConfigError("min_components exceeds max_components", "projection.min_components")
    if p["fit_on"] not in _FIT_ON:
        raise ConfigError(f"fit_on must be one of {sorted(_FIT_ON)}", "projection.fit_on")

    if raw["similarity"]["metric"] not in _METRICS:
        raise ConfigError(f"metric must be one of {sorted(_METRICS)}", "similarity.metric")

    t = raw["thresholds"]
    rng = _list(t["range"], "thresholds.range")
    if len(rng) != 2 or _num(rng[0], "thresholds.range[0]", -1, 1) > _num(rng[1], "thresholds.range[1]", -1, 1):
        raise ConfigError("range must be [low, high] with low <= high", "thresholds.range")
    _num(t["step"], "thresholds.step", 1e-6, 1)
    _num(t["default"], "thresholds.default", -1, 1)

    pr = raw["protection"]
    for i, k in enumerate(_list(pr["k_anonymity"], "protection.k_anonymity")):
        _num(k, f"protection.k_anonymity[{i}]", 1, integer=True)
    for name, spec in pr["noise_levels"].items():
        path = f"protection.noise_levels.{name}"
        if not isinstance(spec, dict):
            raise ConfigError("expected a mapping", path)
        for key in spec:
            if key not in ("age", "time", "swap"):
                raise ConfigError("unknown key", f"{path}.{key}")
        _num(spec.get("age", 0), f"{path}.age", 0, integer=True)
        _num(spec.get("time", 0), f"{path}.time", 0, integer=True)
        _num(spec.get("swap", 0), f"{path}.swap", 0, 1)
    sc = pr["synthetic_correlation"]
    rhos = list(sc.values()) if isinstance(sc, dict) else _list(sc, "protection.synthetic_correlation")
    for i, r in enumerate(rhos):
        _num(r, f"protection.synthetic_correlation[{i}]", 0, 1)
    pr["synthetic_correlation"] = [float(r) for r in rhos]
    _num(pr["suppression_budget"], "protection.suppression_budget", 0, 1)

    e = raw["evaluation"]
    _num(e["seeds"], "evaluation.seeds", 1, integer=True)
    _num(e["bootstrap"], "evaluation.bootstrap", 1, integer=True)
    _num(e["confidence_level"], "evaluation.confidence_level", 0, 1)
    _num(e["alpha"], "evaluation.alpha", 0, 1)
    _num(e["non_match_samples"], "evaluation.non_match_samples", 0, integer=True)

    s = raw["scalability"]
    if s["max_block_size"] is not None:
        _num(s["max_block_size"], "scalability.max_block_size", 1, integer=True)
    _num(s["chunk_size"], "scalability.chunk_size", 1, integer=True)
    _num(s["workers"], "scalability.workers", 1, integer=True)
    if s["ann_threshold"] is not None:
        _num(s["ann_threshold"], "scalability.ann_threshold", 1, integer=True)
        # ANN would only engage on blocks larger than ann_threshold; truncation at
        # max_block_size happens first, so the keys are inert unless reachable
        cap = s["max_block_size"]
        if cap is None or s["ann_threshold"] <= cap:
            raise ConfigError("approximate nearest-neighbour search is unsupported in this build; "
                              "set ann_threshold above max_block_size", "scalability.ann_threshold")


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML (or JSON) config file and resolve it against the defaults."""
    raw: Any = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    merged = _merge(DEFAULTS, raw, "")
    if overrides:
        merged = _merge(merged, overrides, "")
    return ExperimentConfig(merged)


def config_from_dict(raw: dict) -> ExperimentConfig:
    return ExperimentConfig(_merge(DEFAULTS, raw, ""))


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.raw, sort_keys=True).encode()).hexdigest()[:16]
