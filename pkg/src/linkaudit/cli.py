"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 configuration or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .attribution import contribution_stability, feature_contribution
from .baselines import (dcr, encoded_pair, fs_assess, fs_fit, neighbours, nndr,
                        random_within_block, rce, rce_null)
from .config import ConfigError, ExperimentConfig, config_digest, load_config
from .data import (DataParseError, Dataset, GroundTruth, SchemaError, load_dataset,
                   load_ground_truth, load_schema, save_dataset, save_ground_truth)
from .evaluation import (bootstrap_cvpl_ci, calibrate_threshold, integrated_risk, metrics,
                         risk_surface, run_pipeline, self_linkage, similarity_distributions,
                         worst_case_risk)
from .grid import (apply_protection, family_code, grid_cells, protection_levels, run_grid)
from .linkage.assess import SCHEMA_VERSION
from .linkage.blocking import scheme_from_tokens
from .linkage.encoding import encode, fit_encoder
from .linkage.progressive import LadderError, progressive_assess
from .linkage.projection import fit_projection, project
from .protection import GeneralizationMap
from .simulator import SCHEMA, generate

NO_GT_BANNER = ("NO GROUND TRUTH: figures below are existential linkage rates and "
                "self-linkage diagnostics only; precision, recall and false-link rates "
                "cannot be estimated without known correspondences")


class UsageError(ValueError):
    pass


VALIDATION_ERRORS = (ConfigError, SchemaError, DataParseError, LadderError, UsageError)


# --- helpers --------------------------------------------------------------------------


def _schema(args):
    return load_schema(args.schema) if getattr(args, "schema", None) else SCHEMA


def _load(path: str, args) -> Dataset:
    if not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    return load_dataset(path, _schema(args))


def _load_gt(path: str | None, dor: Dataset, dpr: Dataset) -> GroundTruth | None:
    if not path:
        return None
    if not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    return load_ground_truth(path, len(dor), len(dpr))


def _load_gmap(path: str | None) -> GeneralizationMap | None:
    if not path:
        return None
    d = json.loads(Path(path).read_text())
    return GeneralizationMap(int(d["age_width"]), int(d["region_level"]), int(d["time_granularity"]),
                             int(d.get("position", 0)), tuple(d.get("suppressed", ())))


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _stats(x: np.ndarray) -> dict:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        return {"count": 0}
    q = np.percentile(x, [5, 25, 50, 75, 95])
    return {"count": int(len(x)), "mean": float(x.mean()), "sd": float(x.std()),
            "p05": float(q[0]), "p25": float(q[1]), "median": float(q[2]),
            "p75": float(q[3]), "p95": float(q[4])}


def _envelope(cfg: ExperimentConfig, command: str, body: dict, seed: int | None = None) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "version": __version__,
            "seed": cfg.seed if seed is None else seed, "config_digest": config_digest(cfg),
            "config": cfg.to_dict(), **body}


def _write_json(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True, default=_json_default)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _parse_ladder(text: str | None, cfg: ExperimentConfig):
    if not text:
        return cfg.ladder()
    steps = [s.strip() for s in text.split(";") if s.strip()]
    try:
        return [scheme_from_tokens([t.strip() for t in s.split(",") if t.strip()], f"B{i + 1}")
                for i, s in enumerate(steps)]
    except ValueError as exc:
        raise UsageError(f"bad --ladder: {exc}") from None


# --- commands -------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    ds = generate(cfg.sim_config(outlier_fraction=args.p_out))
    out = args.out or "simulated.csv"
    save_dataset(ds, out)
    digest = hashlib.sha256(Path(out).read_bytes()).hexdigest()
    print(f"wrote {len(ds)} rows to {out} (sha256 {digest[:16]})")
    return 0


def cmd_protect(args) -> int:
    cfg = _config(args)
    mech = args.mechanism or args.family
    if mech is None:
        raise UsageError("--mechanism is required")
    fam = family_code(mech)
    if fam == "A":
        if args.k is None:
            raise UsageError("k-anonymity needs --k")
        level = args.k
    elif fam == "B":
        level = args.level or "medium"
        if level not in cfg.section("protection")["noise_levels"]:
            raise UsageError(f"unknown noise level {level!r}")
    else:
        if args.rho is None:
            raise UsageError("synthesis needs --rho")
        level = args.rho
    dor = _load(args.input, args)
    try:
        dpr, gt, gmap = apply_protection(dor, fam, level, cfg.seed, cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out or "protected.csv")
    save_dataset(dpr, out)
    save_ground_truth(gt, out.with_suffix(".gt.csv"))
    meta = {"mechanism": fam, "level": level, "seed": cfg.seed, "n_original": len(dor),
            "n_protected": len(dpr)}
    if gmap is not None:
        out.with_suffix(".gmap.json").write_text(json.dumps(asdict(gmap), indent=1))
        meta["generalization"] = gmap.describe()
        print(gmap.describe())
    out.with_suffix(".meta.json").write_text(json.dumps(meta, indent=1))
    print(f"wrote {len(dpr)} rows to {out}")
    return 0


def _assess_body(cfg, dor, dpr, gt, gmap, tau) -> dict:
    view = gmap.qi_view(dor) if gmap is not None else dor
    pipe = cfg.pipeline(seed=cfg.seed)
    rep, enc, proj = run_pipeline(view, dpr, pipe, gt)
    taus = cfg.taus()
    body = {
        "tau": tau,
        "cvpl_lr": rep.cvpl_lr(tau),
        "curve": {"taus": taus.tolist(), "cvpl_lr": rep.curve(taus).tolist()},
        "worst_case": worst_case_risk(rep, taus),
        "integrated": integrated_risk(rep, taus),
        "components": proj.k,
        "block_summary": rep.block_summary,
        "lower_bound_mode": rep.lower_bound_mode,
        "fingerprint": rep.fingerprint,
    }
    ev = cfg.section("evaluation")
    body["cvpl_lr_ci"] = bootstrap_cvpl_ci(rep, tau, int(ev["bootstrap"]),
                                           float(ev["confidence_level"]), seed=cfg.seed)
    if gt is None:
        body["banner"] = NO_GT_BANNER
        rate, _ = self_linkage(view, pipe, tau)
        body["self_linkage"] = {"original": rate}
        return body
    mb = metrics(rep, tau)
    dist = similarity_distributions(rep)
    cal = calibrate_threshold(dist.s_minus, float(ev["alpha"]), taus,
                              rep.block_summary.get("mean_candidates"))
    body.update({
        "metrics": mb.to_dict(),
        "decomposition": {"r_block": mb.r_block, "r_match": mb.r_match, "r_total": mb.r_total},
        "s_plus": _stats(dist.s_plus),
        "s_minus": _stats(dist.s_minus),
        "overlap": dist.overlap(),
        "calibration": asdict(cal),
    })
    return body


def cmd_assess(args) -> int:
    cfg = _config(args)
    dor, dpr = _load(args.dor, args), _load(args.dpr, args)
    gt = _load_gt(args.gt, dor, dpr)
    tau = cfg.tau if args.tau is None else args.tau
    body = _assess_body(cfg, dor, dpr, gt, _load_gmap(args.generalization), tau)
    if gt is None:
        print(NO_GT_BANNER, file=sys.stderr)
    _write_json(_envelope(cfg, "assess", body), args.out)
    print(f"CVPL-LR({tau:.2f}) = {body['cvpl_lr']:.4f}", file=sys.stderr)
    return 0


def cmd_progressive(args) -> int:
    cfg = _config(args)
    dor, dpr = _load(args.dor, args), _load(args.dpr, args)
    gmap = _load_gmap(args.generalization)
    view = gmap.qi_view(dor) if gmap is not None else dor
    ladder = _parse_ladder(args.ladder, cfg)
    pipe = cfg.pipeline(seed=cfg.seed)
    enc = fit_encoder(view, dpr, pipe.encoding)
    a, b = encode(enc, view), encode(enc, dpr)
    proj = fit_projection(a, b, pipe.variance_retained, pipe.strategy,
                          pipe.min_components, pipe.max_components)
    tau = cfg.tau if args.tau is None else args.tau
    res = progressive_assess(view, dpr, ladder, project(proj, a), project(proj, b), tau,
                             args.epsilon, pipe.options)
    body = {"tau": tau, "epsilon": args.epsilon, **res.to_dict()}
    _write_json(_envelope(cfg, "progressive", body), args.out)
    for lab, r in zip(res.labels, res.rates):
        print(f"{lab}: {r:.4f}", file=sys.stderr)
    return 0


def cmd_baselines(args) -> int:
    cfg = _config(args)
    dor, dpr = _load(args.dor, args), _load(args.dpr, args)
    gt = _load_gt(args.gt, dor, dpr)
    gmap = _load_gmap(args.generalization)
    scheme = cfg.blocking_scheme()
    view = gmap.qi_view(dor) if gmap is not None else dor
    body: dict = {"random_within_block": random_within_block(view, dpr, scheme, cfg.seed).to_dict(gt)}
    xb, xa = encoded_pair(dpr, dor)
    nb = neighbours(xb, xa)
    body["dcr"] = dcr(xb, xa, nb).mean
    body["nndr"] = nndr(xb, xa, nb).mean
    pipe = cfg.pipeline(seed=cfg.seed)
    body["self_linkage"] = {"original": self_linkage(view, pipe, cfg.tau)[0]}
    if gt is None:
        body["banner"] = NO_GT_BANNER
        print(NO_GT_BANNER, file=sys.stderr)
    else:
        model = fs_fit(dor, dpr, scheme, gt, seed=cfg.seed, generalization=gmap)
        fs = fs_assess(model, dor, dpr, scheme)
        body["fellegi_sunter"] = {**fs.to_dict(gt), "m": model.m.tolist(), "u": model.u.tolist(),
                                  "attributes": list(model.attributes),
                                  "flags": list(model.flags)}
        body["rce"] = rce(xb, xa, gt, nb)
        body["rce_null"] = rce_null(xb, xa, gt, cfg.seed, nb)
    _write_json(_envelope(cfg, "baselines", body), args.out)
    return 0


def cmd_attribute(args) -> int:
    cfg = _config(args)
    dor, dpr = _load(args.dor, args), _load(args.dpr, args)
    gmap = _load_gmap(args.generalization)
    view = gmap.qi_view(dor) if gmap is not None else dor
    pipe = cfg.pipeline(seed=cfg.seed)
    _, enc, proj = run_pipeline(view, dpr, pipe)
    rep = feature_contribution(proj, enc)
    if args.bootstrap >= 2:
        rep = rep.with_sd(contribution_stability(view, dpr, pipe, args.bootstrap, cfg.seed))
    _write_json(_envelope(cfg, "attribute", rep.to_dict()), args.out)
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    return 0


def cmd_surface(args) -> int:
    cfg = _config(args)
    fam = family_code(args.family or args.mechanism or "A")
    dor = _load(args.input, args) if args.input else generate(cfg.sim_config())
    levels = protection_levels(cfg, fam)
    if args.levels:
        levels = [int(v) if fam == "A" else (v if fam == "B" else float(v))
                  for v in args.levels.split(",")]
    pipe = cfg.pipeline(seed=cfg.seed)
    reports = {}
    for lam in levels:
        dpr, gt, gmap = apply_protection(dor, fam, lam, cfg.seed, cfg)
        view = gmap.qi_view(dor) if gmap is not None else dor
        reports[lam], _, _ = run_pipeline(view, dpr, pipe, gt)
    surf = risk_surface(reports, cfg.taus())
    out = args.out or "surface.csv"
    Path(out).write_text(surf.to_csv())
    print(f"wrote {len(levels)} x {len(surf.taus)} surface to {out}", file=sys.stderr)
    return 0


def cmd_grid(args) -> int:
    cfg = _config(args)
    fams = [family_code(f) for f in args.family] if args.family else None
    p_outs = [float(p) for p in args.p_out.split(",")] if args.p_out else None
    cells = grid_cells(cfg, fams, p_outs=p_outs, seeds=args.seeds)
    out = args.out or "grid_out"
    res = run_grid(cfg, cells, out, workers=args.workers)
    print(f"{len(res.results)} of {len(cells)} cells completed; summary in {out}/summary.csv",
          file=sys.stderr)
    for key, err in res.failures.items():
        print(f"FAILED {key}: {err.splitlines()[0]}", file=sys.stderr)
    return 1 if res.failures else 0


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linkaudit", description="Latent-space linkage risk audits.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--seed", type=int, help="override data.seed")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--schema", help="schema sidecar file (defaults to the simulator schema)")

    def pair(sp, gt=True):
        sp.add_argument("--dor", required=True, help="original dataset CSV")
        sp.add_argument("--dpr", required=True, help="protected dataset CSV")
        if gt:
            sp.add_argument("--gt", help="ground-truth CSV (original,protected)")
        sp.add_argument("--generalization", help="generalization map JSON written by 'protect'")

    sp = sub.add_parser("simulate", help="generate a synthetic marketing dataset")
    common(sp)
    sp.add_argument("--p-out", type=float, default=0.0, help="outlier fraction")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("protect", help="apply a protection mechanism")
    common(sp)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--mechanism", choices=["k-anon", "perturb", "synthetic", "A", "B", "C"])
    sp.add_argument("--family", choices=["k-anon", "perturb", "synthetic", "A", "B", "C"])
    sp.add_argument("--k", type=int)
    sp.add_argument("--level")
    sp.add_argument("--rho", type=float)
    sp.set_defaults(func=cmd_protect)

    sp = sub.add_parser("assess", help="CVPL assessment of a dataset pair")
    common(sp)
    pair(sp)
    sp.add_argument("--tau", type=float)
    sp.set_defaults(func=cmd_assess)

    sp = sub.add_parser("progressive", help="progressive blocking relaxation")
    common(sp)
    pair(sp, gt=False)
    sp.add_argument("--ladder", help="steps separated by ';', keys by ',' "
                                     "(e.g. 'age_bin:10,region_level:2,gender;age_bin:10,gender')")
    sp.add_argument("--tau", type=float)
    sp.add_argument("--epsilon", type=float, default=0.01)
    sp.set_defaults(func=cmd_progressive)

    sp = sub.add_parser("baselines", help="Fellegi-Sunter, random and distance baselines")
    common(sp)
    pair(sp)
    sp.set_defaults(func=cmd_baselines)

    sp = sub.add_parser("attribute", help="feature contribution analysis")
    common(sp)
    pair(sp, gt=False)
    sp.add_argument("--bootstrap", type=int, default=0, help="resamples for stability (0 = skip)")
    sp.add_argument("--csv", help="also write attribute,contribution,sd,category CSV")
    sp.set_defaults(func=cmd_attribute)

    sp = sub.add_parser("surface", help="risk surface CSV over protection levels and thresholds")
    common(sp)
    sp.add_argument("--in", dest="input", help="original dataset CSV (simulated when omitted)")
    sp.add_argument("--family", choices=["k-anon", "perturb", "synthetic", "A", "B", "C"])
    sp.add_argument("--mechanism", choices=["k-anon", "perturb", "synthetic", "A", "B", "C"])
    sp.add_argument("--levels", help="comma-separated protection levels")
    sp.set_defaults(func=cmd_surface)

    sp = sub.add_parser("grid", help="run the factorial experiment grid")
    common(sp)
    sp.add_argument("--family", action="append", choices=["k-anon", "perturb", "synthetic", "A", "B", "C"])
    sp.add_argument("--p-out", help="comma-separated outlier fractions")
    sp.add_argument("--seeds", type=int, help="replicates per configuration")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_grid)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
