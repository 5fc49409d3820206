"""Factorial experiment grid: protection configuration x outlier fraction x replicate."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import dcr, encoded_pair, fs_assess, fs_fit, neighbours, nndr, rce, rce_null
from .config import ExperimentConfig, config_digest
from .data import Dataset, GroundTruth
from .evaluation import bootstrap_cvpl_ci, metrics, run_pipeline
from .linkage.assess import SCHEMA_VERSION
from .protection import GeneralizationMap, k_anonymize, perturb, synthesize
from .simulator import generate
from .utility import utility

FAMILIES = {"A": "k-anon", "B": "perturb", "C": "synthetic"}
_ALIASES = {"A": "A", "B": "B", "C": "C", "k-anon": "A", "k-anonymity": "A",
            "perturb": "B", "perturbation": "B", "synthetic": "C", "synth": "C"}


def family_code(name: str) -> str:
    try:
        return _ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown protection family {name!r}; expected one of "
                         f"{sorted(_ALIASES)}") from None


def stable_hash(*parts) -> int:
    """31-bit hash of the parts' text, identical across processes and runs."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big") & 0x7FFF_FFFF


def protection_levels(cfg: ExperimentConfig, family: str) -> list:
    fam = family_code(family)
    pr = cfg.section("protection")
    if fam == "A":
        return [int(k) for k in pr["k_anonymity"]]
    if fam == "B":
        return list(pr["noise_levels"])
    return [float(r) for r in pr["synthetic_correlation"]]


def apply_protection(dor: Dataset, family: str, level, seed: int, cfg: ExperimentConfig
                     ) -> tuple[Dataset, GroundTruth, GeneralizationMap | None]:
    fam = family_code(family)
    pr = cfg.section("protection")
    if fam == "A":
        dpr, gmap, gt = k_anonymize(dor, int(level), budget=float(pr["suppression_budget"]))
        return dpr, gt, gmap
    if fam == "B":
        dpr, gt = perturb(dor, str(level), seed, levels=pr["noise_levels"])
        return dpr, gt, None
    dpr, gt = synthesize(dor, float(level), seed)
    return dpr, gt, None


def protection_label(family: str, level) -> str:
    fam = family_code(family)
    if fam == "A":
        return f"k-anon (k={level})"
    if fam == "B":
        return f"perturb ({level})"
    return f"synthetic (rho={float(level):.2f})"


@dataclass(frozen=True)
class Cell:
    family: str
    level: object
    p_out: float
    replicate: int

    @property
    def key(self) -> str:
        return f"{self.family}_{self.level}_p{self.p_out:g}_r{self.replicate}"


def grid_cells(cfg: ExperimentConfig, families: Sequence[str] | None = None,
               levels: Sequence | None = None, p_outs: Sequence[float] | None = None,
               seeds: int | None = None) -> list[Cell]:
    fams = [family_code(f) for f in (families or ("A", "B", "C"))]
    p_outs = cfg.outlier_fractions if p_outs is None else [float(p) for p in p_outs]
    n_rep = int(cfg.section("evaluation")["seeds"]) if seeds is None else int(seeds)
    cells = []
    for fam in fams:
        lv = protection_levels(cfg, fam) if levels is None else list(levels)
        for level in lv:
            for p in p_outs:
                for r in range(n_rep):
                    cells.append(Cell(fam, level, p, r))
    return cells


def data_seed(cfg: ExperimentConfig, replicate: int) -> int:
    # all protection configurations and outlier fractions of one replicate share
    # the base draw, so p_out comparisons are paired
    return cfg.seed + replicate


def cell_seed(cfg: ExperimentConfig, cell: Cell) -> int:
    return cfg.seed + stable_hash(cell.family, cell.level, f"{cell.p_out:g}", cell.replicate)


def _dataset(cfg: ExperimentConfig, p_out: float, replicate: int, cache: dict) -> Dataset:
    key = (p_out, replicate)
    if key not in cache:
        cache.clear()  # cells arrive grouped, one dataset at a time is enough
        cache[key] = generate(cfg.sim_config(seed=data_seed(cfg, replicate), outlier_fraction=p_out))
    return cache[key]


def _r(x) -> float | None:
    return None if x is None or (isinstance(x, float) and np.isnan(x)) else round(float(x), 12)


def run_cell(cfg: ExperimentConfig, cell: Cell, cache: dict | None = None) -> dict:
    """Every metric of one grid cell as a JSON-ready dict (no timings, so it is reproducible)."""
    cache = {} if cache is None else cache
    seed = cell_seed(cfg, cell)
    dor = _dataset(cfg, cell.p_out, cell.replicate, cache)
    dpr, gt, gmap = apply_protection(dor, cell.family, cell.level, seed, cfg)
    pipe = cfg.pipeline(seed=seed)
    view = gmap.qi_view(dor) if gmap is not None else dor
    report, enc, proj = run_pipeline(view, dpr, pipe, gt)
    tau = cfg.tau
    mb = metrics(report, tau)
    ev = cfg.section("evaluation")
    ci = bootstrap_cvpl_ci(report, tau, B=int(ev["bootstrap"]), level=float(ev["confidence_level"]),
                           seed=seed)
    model = fs_fit(dor, dpr, pipe.scheme, gt, seed=seed, generalization=gmap)
    fs = fs_assess(model, dor, dpr, pipe.scheme)
    util = utility(dor, dpr, gt, seed=seed)
    xb, xa = encoded_pair(dpr, dor)
    nb = neighbours(xb, xa)
    return {
        "schema_version": SCHEMA_VERSION,
        "cell": {"family": cell.family, "family_name": FAMILIES[cell.family],
                 "level": cell.level, "protection": protection_label(cell.family, cell.level),
                 "p_out": cell.p_out, "replicate": cell.replicate,
                 "data_seed": data_seed(cfg, cell.replicate), "protection_seed": seed},
        "n_original": len(dor),
        "n_protected": len(dpr),
        "generalization": None if gmap is None else gmap.describe(),
        "components": proj.k,
        "metrics": mb.to_dict(),
        "recall_identity_exact": bool(mb.r_total == mb.r_block * mb.r_match),
        "cvpl_lr_ci": [ci[0], ci[1]],
        "curve": {"taus": [float(t) for t in cfg.taus()],
                  "cvpl_lr": [float(v) for v in report.curve(cfg.taus())]},
        "lower_bound_mode": bool(report.lower_bound_mode),
        "fs": {"linkage_rate": fs.linkage_rate, "precision_at_1": fs.precision_at_1(gt),
               "flags": list(model.flags)},
        "utility": util.to_dict(),
        "dcr": _r(dcr(xb, xa, nb).mean),
        "nndr": _r(nndr(xb, xa, nb).mean),
        "rce": _r(rce(xb, xa, gt, nb)),
        "rce_null": _r(rce_null(xb, xa, gt, seed, nb)),
        "fingerprint": report.fingerprint,
    }


def _run_group(args) -> list[tuple[Cell, dict | None, str | None]]:
    raw, cells = args
    cfg = ExperimentConfig(raw)
    cache: dict = {}
    out = []
    for cell in cells:
        try:
            out.append((cell, run_cell(cfg, cell, cache), None))
        except Exception as exc:  # isolate the cell, keep the grid going
            out.append((cell, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"))
    return out


@dataclass
class GridResult:
    cells: list[Cell]
    results: dict          # cell key -> cell dict
    failures: dict         # cell key -> error text
    config: ExperimentConfig

    def summary_rows(self) -> list[dict]:
        return summarize(self.cells, self.results)

    def summary_csv(self) -> str:
        return rows_to_csv(self.summary_rows(), SUMMARY_COLUMNS)

    def cells_csv(self) -> str:
        rows = []
        for c in self.cells:
            r = self.results.get(c.key)
            if r is None:
                continue
            rows.append(_cell_row(r))
        return rows_to_csv(rows, CELL_COLUMNS)


def run_grid(cfg: ExperimentConfig, cells: Sequence[Cell], out_dir: str | Path | None = None,
             workers: int = 1) -> GridResult:
    """Run every cell; failing cells are recorded and skipped.

    Cells sharing a dataset are grouped so each simulated dataset is generated
    once per group.  Output order never depends on ``workers``.
    """
    groups: dict = {}
    for c in cells:
        groups.setdefault((c.p_out, c.replicate), []).append(c)
    jobs = [(cfg.raw, g) for g in groups.values()]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_run_group, jobs))
    else:
        batches = [_run_group(j) for j in jobs]
    results, failures = {}, {}
    for batch in batches:
        for cell, res, err in batch:
            if err is None:
                results[cell.key] = res
            else:
                failures[cell.key] = err
    grid = GridResult(list(cells), results, failures, cfg)
    if out_dir is not None:
        write_grid(grid, out_dir)
    return grid


def write_grid(grid: GridResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    resolved = grid.config.to_dict()
    for c in grid.cells:
        res = grid.results.get(c.key)
        doc = {"config": resolved, "config_digest": config_digest(grid.config)}
        if res is None:
            doc.update({"cell": c.key, "error": grid.failures.get(c.key)})
        else:
            doc.update(res)
        (out / "cells" / f"{c.key}.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    (out / "summary.csv").write_text(grid.summary_csv())
    (out / "cells.csv").write_text(grid.cells_csv())
    (out / "failures.json").write_text(json.dumps(grid.failures, indent=1, sort_keys=True))


SUMMARY_COLUMNS = ["protection", "family", "level", "p_out", "n_seeds", "cvpl_lr", "cvpl_lr_ci_low",
                   "cvpl_lr_ci_high", "fs_lr", "cvpl_p1", "fs_p1", "utility", "dcr", "nndr",
                   "rce", "rce_null", "r_block", "r_match", "r_total"]
CELL_COLUMNS = ["protection", "family", "level", "p_out", "replicate", "cvpl_lr", "cvpl_lr_ci_low",
                "cvpl_lr_ci_high", "fs_lr", "cvpl_p1", "fs_p1", "utility", "dcr", "nndr", "rce",
                "rce_null", "r_block", "r_match", "r_total"]


def _cell_row(r: dict) -> dict:
    m = r["metrics"]
    return {
        "protection": r["cell"]["protection"], "family": r["cell"]["family"],
        "level": r["cell"]["level"], "p_out": r["cell"]["p_out"],
        "replicate": r["cell"]["replicate"],
        "cvpl_lr": m["cvpl_lr"], "cvpl_lr_ci_low": r["cvpl_lr_ci"][0],
        "cvpl_lr_ci_high": r["cvpl_lr_ci"][1],
        "fs_lr": r["fs"]["linkage_rate"], "cvpl_p1": m["precision_at_1"],
        "fs_p1": r["fs"]["precision_at_1"], "utility": r["utility"]["composite"],
        "dcr": r["dcr"], "nndr": r["nndr"], "rce": r["rce"], "rce_null": r["rce_null"],
        "r_block": m["r_block"], "r_match": m["r_match"], "r_total": m["r_total"],
    }


def summarize(cells: Sequence[Cell], results: dict) -> list[dict]:
    """Seed-averaged rows per (family, level, p_out) in grid order; CI bounds are averaged too."""
    groups: dict = {}
    for c in cells:
        res = results.get(c.key)
        if res is not None:
            groups.setdefault((c.family, c.level, c.p_out), []).append(_cell_row(res))
    rows = []
    for (fam, level, p), members in groups.items():
        row = {"protection": members[0]["protection"], "family": fam, "level": level, "p_out": p,
               "n_seeds": len(members)}
        for col in SUMMARY_COLUMNS[5:]:
            vals = [m[col] for m in members if m[col] is not None]
            row[col] = float(np.mean(vals)) if vals else None
        rows.append(row)
    return rows


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r[c] is None else (f"{r[c]:.6f}" if isinstance(r[c], float) else r[c])
                    for c in columns])
    return buf.getvalue()
