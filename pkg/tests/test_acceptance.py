"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The default experiment grid (285 cells at n = 10,000) runs once per session;
set LINKAUDIT_GRID_DIR to a directory written by ``linkaudit grid`` with the
default config to reuse its cell documents instead.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from linkaudit.attribution import feature_contribution
from linkaudit.baselines import (dcr, encoded_pair, fs_equals_cvpl_check, fs_from_rates,
                                 neighbours, nndr)
from linkaudit.config import config_digest, load_config
from linkaudit.data import Dataset, make_schema
from linkaudit.evaluation import (PipelineConfig, calibrate_threshold, existential_false_link,
                                  metrics, run_pipeline, self_linkage)
from linkaudit.grid import Cell, apply_protection, grid_cells, run_cell, run_grid
from linkaudit.linkage import (DEFAULT_TAUS, AssessOptions, assess_latent, assign_blocks, encode,
                               fit_encoder, fit_projection, is_relaxation, naive_maxima,
                               progressive_assess, project, scheme_from_tokens)
from linkaudit.protection import K_ANON_QIS, min_equivalence_class, perturb
from linkaudit.simulator import SimConfig, generate

CFG = load_config()


@pytest.fixture(scope="module")
def grid():
    """Cell key -> cell document for the full default grid."""
    cached = os.environ.get("LINKAUDIT_GRID_DIR")
    if cached:
        docs = [json.loads(p.read_text()) for p in sorted(Path(cached, "cells").glob("*.json"))]
        out = {}
        for d in docs:
            c = d["cell"]
            key = Cell(c["family"], c["level"], c["p_out"], c["replicate"]).key
            out[key] = d
        assert len(out) == len(grid_cells(CFG)), "cached grid is incomplete"
        return out
    res = run_grid(CFG, grid_cells(CFG), workers=os.cpu_count() or 1)
    assert not res.failures, res.failures
    return res.results


def _cells(grid, family, level=None, p_out=None):
    return [d for d in grid.values()
            if d["cell"]["family"] == family
            and (level is None or d["cell"]["level"] == level)
            and (p_out is None or d["cell"]["p_out"] == p_out)]


def _mean(docs, get):
    return float(np.mean([get(d) for d in docs]))


@pytest.fixture(scope="module")
def default_data():
    return generate(CFG.sim_config())


# -- 1. monotonicity under relaxation ----------------------------------------------------

def _random_pair(rng):
    """A finer scheme and a candidate relaxation of it, as token lists."""
    fine, coarse = [], []
    if rng.random() < 0.8:
        w = int(rng.choice([5, 10]))
        fine.append(f"age_bin:{w}")
        r = rng.random()
        if r < 0.6:
            coarse.append(f"age_bin:{w * int(rng.choice([1, 2, 4]))}")
        elif r < 0.8:
            coarse.append(f"age_bin:{int(rng.choice([15, 30]))}")  # often not a relaxation
    if rng.random() < 0.8:
        lvl = int(rng.choice([1, 2]))
        fine.append(f"region_level:{lvl}")
        if rng.random() < 0.6:
            coarse.append(f"region_level:{int(rng.choice([1, lvl]))}")
    if rng.random() < 0.7:
        fine.append("gender")
        if rng.random() < 0.5:
            coarse.append("gender")
    return fine, coarse


def test_criterion_01_monotonicity(criterion):
    start = time.perf_counter()
    dor = generate(SimConfig(n_records=1000, seed=101))
    dpr, _ = perturb(dor, "medium", seed=102)
    enc = fit_encoder(dor, dpr)
    a, b = encode(enc, dor), encode(enc, dpr)
    proj = fit_projection(a, b)
    za, zb = project(proj, a), project(proj, b)
    opt = AssessOptions(max_block_size=None, non_match_samples=0)
    curves: dict = {}

    def curve(tokens):
        key = tuple(tokens)
        if key not in curves:
            s = scheme_from_tokens(tokens)
            rep = assess_latent(assign_blocks(dor, s), assign_blocks(dpr, s), za, zb, opt)
            curves[key] = rep.curve(DEFAULT_TAUS)
        return curves[key]

    rng = np.random.default_rng(2024)
    pairs = violations = rejected = 0
    while pairs < 100:
        fine, coarse = _random_pair(rng)
        s1, s2 = scheme_from_tokens(fine), scheme_from_tokens(coarse)
        if not is_relaxation(s1, s2, [dor, dpr]):
            rejected += 1
            continue
        pairs += 1
        violations += int(np.sum(curve(fine) > curve(coarse)))
    elapsed = time.perf_counter() - start
    criterion(1, violations == 0 and elapsed < 120,
              f"{pairs} validated pairs ({rejected} rejected), {len(DEFAULT_TAUS)} thresholds, "
              f"{violations} violations, {elapsed:.1f}s")


# -- 2. anytime lower bound ----------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="largest increment comes from dropping region, not the "
                                       "first step; see the decisions ledger")
def test_criterion_02_progressive_ladder(criterion, default_data):
    dpr, _, _ = apply_protection(default_data, "B", "medium", CFG.seed, CFG)
    pipe = CFG.pipeline(seed=CFG.seed)
    enc = fit_encoder(default_data, dpr, pipe.encoding)
    a, b = encode(enc, default_data), encode(enc, dpr)
    proj = fit_projection(a, b, pipe.variance_retained, pipe.strategy,
                          pipe.min_components, pipe.max_components)
    res = progressive_assess(default_data, dpr, CFG.ladder(), project(proj, a), project(proj, b),
                             CFG.tau, 0.01, pipe.options)
    r = np.array(res.rates)
    inc = np.diff(r)
    nondecreasing = bool((inc >= 0).all())
    converged = res.converged and res.stop_index <= 3
    flat_tail = bool(inc[-1] < 0.01)
    first_largest = len(inc) > 0 and inc[0] == inc.max() and inc[0] > 0.01
    criterion(2, nondecreasing and converged and flat_tail and first_largest,
              f"rates {np.round(r, 3).tolist()}, stop at step {res.stop_index + 1}; "
              f"nondecreasing={nondecreasing} converged={converged} flat_tail={flat_tail} "
              f"first_jump_largest={first_largest}")


# -- 3. oracle equivalence -----------------------------------------------------------------

SCHEMES = [["age_bin:10", "region_level:1", "gender"], ["age_bin:5", "gender"],
           ["region_level:2"], ["age_bin:20"], []]


def test_criterion_03_oracle_equivalence(criterion):
    rng = np.random.default_rng(33)
    mismatches = 0
    for _ in range(20):
        n = int(rng.integers(50, 501))
        dor = generate(SimConfig(n_records=n, seed=int(rng.integers(1 << 30))))
        fam = rng.choice(["perturb", "identity"])
        dpr = perturb(dor, str(rng.choice(["low", "high"])), seed=1)[0] if fam == "perturb" else dor
        scheme = scheme_from_tokens(SCHEMES[int(rng.integers(len(SCHEMES)))])
        sim = str(rng.choice(["cosine", "euclidean"]))
        opt = AssessOptions(similarity=sim, chunk_size=int(rng.choice([1, 7, 64, 1024])),
                            max_block_size=None, non_match_samples=3)
        rep, enc, proj = run_pipeline(dor, dpr, PipelineConfig(scheme, options=opt))
        za, zb = project(proj, encode(enc, dor)), project(proj, encode(enc, dpr))
        best, arg = naive_maxima(assign_blocks(dor, scheme), assign_blocks(dpr, scheme), za, zb, sim)
        ok = np.array_equal(rep.max_sim, best, equal_nan=True) and np.array_equal(rep.argmax, arg)
        mismatches += int(not ok)

    # distance diagnostics and self-linkage at n = 300
    dor = generate(SimConfig(n_records=300, seed=34))
    dpr, _ = perturb(dor, "medium", seed=3)
    xb, xa = encoded_pair(dpr, dor)
    d = cdist(xb, xa)
    order = np.argsort(d, axis=1, kind="stable")
    d1 = np.take_along_axis(d, order[:, :1], axis=1)[:, 0]
    d2 = np.take_along_axis(d, order[:, 1:2], axis=1)[:, 0]
    nb = neighbours(xb, xa)
    dist_ok = (np.allclose(dcr(xb, xa, nb).values, d1, atol=1e-9, rtol=0)
               and np.allclose(nndr(xb, xa, nb).values, np.where(d2 > 0, d1 / np.where(d2 > 0, d2, 1), 1.0),
                               atol=1e-9, rtol=0))
    scheme = scheme_from_tokens(SCHEMES[0])
    _, srep = self_linkage(dor, PipelineConfig(scheme), CFG.tau)
    enc = fit_encoder(dor, dor)
    x = encode(enc, dor)
    z = project(fit_projection(x, x), x)
    lab = assign_blocks(dor, scheme)
    best, arg = naive_maxima(lab, lab, z, z, exclude_self=True)
    self_ok = np.array_equal(srep.max_sim, best, equal_nan=True) and np.array_equal(srep.argmax, arg)
    criterion(3, mismatches == 0 and dist_ok and self_ok,
              f"top-1 scan vs all-pairs oracle: {20 - mismatches}/20 exact; "
              f"DCR/NNDR match={dist_ok}; self-linkage match={self_ok}")


# -- 4. Fellegi-Sunter reduction -----------------------------------------------------------

def test_criterion_04_fs_reduction(criterion):
    rng = np.random.default_rng(44)
    names = [f"b{i}" for i in range(6)]
    schema = make_schema([(n, "categorical", "analytical") for n in names])

    def binary(bits):
        return Dataset(schema, {n: np.array([str(v) for v in bits[:, k]], dtype=object)
                                for k, n in enumerate(names)})

    ba, bb = rng.integers(0, 2, (8, 6)), rng.integers(0, 2, (8, 6))
    model = fs_from_rates(names, rng.uniform(0.55, 0.95, 6), rng.uniform(0.05, 0.45, 6))
    direct = fs_equals_cvpl_check(binary(ba), binary(bb), model)

    # the same reduction through the assessment engine: identity projection, weighted dot
    def onehot(bits):
        out = np.repeat(bits.astype(float), 2, axis=1)
        out[:, 0::2] = 1.0 - bits
        return out

    one = np.array(["*"] * 8, dtype=object)
    opt = AssessOptions(similarity="weighted-dot", weights=tuple(np.repeat(model.weights, 2)),
                        non_match_samples=0)
    rep = assess_latent(one, one, onehot(ba), onehot(bb), opt)
    gamma = (ba[:, None, :] == bb[None, :, :]).astype(float).reshape(-1, 6)
    fs = model.composite(gamma).reshape(8, 8)
    engine = float(np.max(np.abs(rep.max_sim - (fs - model.constant).max(axis=1))))
    criterion(4, direct <= 1e-9 and engine <= 1e-9,
              f"max |CVPL score - (FS composite - c)| = {direct:.2e} over 64 pairs; "
              f"top-1 through the engine {engine:.2e}")


# -- 5. FS over-linking ----------------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="supervised FS attains higher Precision@1 than CVPL; "
                                       "see the decisions ledger")
def test_criterion_05_fs_over_linking(criterion, grid):
    docs = list(grid.values())
    fs_lr = _mean(docs, lambda d: d["fs"]["linkage_rate"])
    cv_lr = _mean(docs, lambda d: d["metrics"]["cvpl_lr"])
    fs_p1 = _mean(docs, lambda d: d["fs"]["precision_at_1"])
    cv_p1 = _mean(docs, lambda d: d["metrics"]["precision_at_1"])
    criterion(5, fs_lr >= 2 * cv_lr and cv_p1 > fs_p1,
              f"FS-LR {fs_lr:.3f} vs CVPL-LR {cv_lr:.3f} (ratio {fs_lr / cv_lr:.2f}); "
              f"P@1 CVPL {cv_p1:.3f} vs FS {fs_p1:.3f}")


# -- 6. perturbation gradient ----------------------------------------------------------------

def test_criterion_06_perturbation_gradient(criterion, grid):
    rows = {}
    for level in ("low", "medium", "high"):
        docs = _cells(grid, "B", level, 0.0)
        assert len(docs) == 5
        rows[level] = (_mean(docs, lambda d: d["metrics"]["cvpl_lr"]),
                       _mean(docs, lambda d: d["utility"]["composite"]),
                       _mean(docs, lambda d: d["cvpl_lr_ci"][0]),
                       _mean(docs, lambda d: d["cvpl_lr_ci"][1]))
    lr = [rows[k][0] for k in ("low", "medium", "high")]
    ut = [rows[k][1] for k in ("low", "medium", "high")]
    separated = rows["low"][2] > rows["high"][3]
    ok = lr[0] > lr[1] > lr[2] and ut[0] > ut[1] > ut[2] and separated
    criterion(6, ok, f"CVPL-LR {np.round(lr, 3).tolist()}, utility {np.round(ut, 3).tolist()}, "
                     f"CI low [{rows['low'][2]:.3f}, {rows['low'][3]:.3f}] vs "
                     f"high [{rows['high'][2]:.3f}, {rows['high'][3]:.3f}]")


# -- 7. k-anonymity existential effect -------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="coarser k-anonymity lowers CVPL-LR under this simulator; "
                                       "see the decisions ledger")
def test_criterion_07_k_anonymity(criterion, grid, default_data):
    lr = {k: _mean(_cells(grid, "A", k, 0.0), lambda d: d["metrics"]["cvpl_lr"])
          for k in (5, 10, 20)}
    verified = True
    for k in CFG.section("protection")["k_anonymity"]:
        out, _, _ = apply_protection(default_data, "A", k, CFG.seed, CFG)
        verified &= min_equivalence_class(out, K_ANON_QIS) >= k
    ok = lr[10] > lr[5] and lr[20] > lr[5] and verified
    criterion(7, ok, f"CVPL-LR(0.9) k=5 {lr[5]:.4f}, k=10 {lr[10]:.4f}, k=20 {lr[20]:.4f}; "
                     f"every release k-anonymous: {verified}")


# -- 8. synthetic decoupling -----------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="rho = 0.95 keeps Precision@1 above 0.05 and RCE sits "
                                       "under 10pp above the null; see the decisions ledger")
def test_criterion_08_synthetic_decoupling(criterion, grid):
    parts, ok = [], True
    for rho in CFG.section("protection")["synthetic_correlation"]:
        docs = _cells(grid, "C", rho)
        p1 = _mean(docs, lambda d: d["metrics"]["precision_at_1"])
        lr = _mean(docs, lambda d: d["metrics"]["cvpl_lr"])
        ok &= p1 < 0.05 and lr > 0.05
        parts.append(f"rho={rho:g}: P@1 {p1:.3f} LR {lr:.3f}")
    docs = _cells(grid, "C")
    gap = _mean(docs, lambda d: d["rce"] - d["rce_null"])
    ok &= gap >= 0.10
    criterion(8, ok, "; ".join(parts) + f"; RCE - null {100 * gap:.1f}pp")


# -- 9. calibration control -----------------------------------------------------------------

def test_criterion_09_calibration(criterion):
    alpha, exceed = 0.05, []
    pipe = PipelineConfig(scheme_from_tokens(SCHEMES[0]))
    for s in range(20):
        samples = []
        for seed in (s, 10_000 + s):   # calibration draw, then an independent held-out draw
            dor = generate(SimConfig(n_records=2000, seed=seed))
            dpr, gt = perturb(dor, "medium", seed=seed + 1)
            rep, _, _ = run_pipeline(dor, dpr, pipe, gt)
            samples.append(rep.s_minus[~np.isnan(rep.s_minus)])
        cal = calibrate_threshold(samples[0], alpha)
        exceed.append(np.mean(samples[1] >= cal.tau))
    exceed = np.array(exceed)
    se = exceed.std(ddof=1) / np.sqrt(len(exceed))
    m = 20.0
    arith = existential_false_link(alpha, m) == 1 - (1 - alpha) ** m
    cal = calibrate_threshold(samples[0], alpha, mean_candidates=m)
    arith &= cal.existential == 1 - (1 - alpha) ** m
    ok = exceed.mean() <= alpha + 2 * se and arith
    criterion(9, ok, f"held-out exceedance {exceed.mean():.4f} (SE {se:.4f}, max {exceed.max():.4f}) "
                     f"vs {alpha} + 2 SE; existential arithmetic exact: {arith}")


# -- 10. recall identity --------------------------------------------------------------------

def test_criterion_10_recall_identity(criterion, grid):
    exact = sum(d["recall_identity_exact"]
                and d["metrics"]["r_total"] == d["metrics"]["r_block"] * d["metrics"]["r_match"]
                for d in grid.values())
    criterion(10, exact == len(grid), f"{exact}/{len(grid)} grid bundles bit-exact")


# -- 11. risk-surface shape -----------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="k-anonymous releases keep about 6% of records linkable at "
                                       "tau = 0.95; see the decisions ledger")
def test_criterion_11_risk_surface(criterion, grid):
    docs = _cells(grid, "A", p_out=0.0)
    taus = np.array(docs[0]["curve"]["taus"])
    monotone = all((np.diff(d["curve"]["cvpl_lr"]) <= 0).all() for d in docs)
    high = taus >= 0.95 - 1e-9
    worst = {}
    for k in CFG.section("protection")["k_anonymity"]:
        surf = np.mean([d["curve"]["cvpl_lr"] for d in _cells(grid, "A", k, 0.0)], axis=0)
        worst[k] = float(surf[high].max())
    ok = monotone and max(worst.values()) < 0.05
    criterion(11, ok, f"{len(docs)} rows nonincreasing: {monotone}; max risk at tau >= 0.95 "
                      f"{max(worst.values()):.4f} (k={max(worst, key=worst.get)})")


# -- 12. outlier behaviour ------------------------------------------------------------------

def test_criterion_12_outliers(criterion, grid):
    def at(p):
        return np.array([d["metrics"]["cvpl_lr"] for d in grid.values() if d["cell"]["p_out"] == p])

    base, out = at(0.0), at(0.05)
    shift = out.mean() - base.mean()
    p95 = (np.percentile(base, 95), np.percentile(out, 95))
    ok = abs(shift) <= 0.02 and p95[1] > p95[0]
    criterion(12, ok, f"mean shift {shift:+.4f} ({base.mean():.4f} -> {out.mean():.4f}); "
                      f"p95 {p95[0]:.4f} -> {p95[1]:.4f}")


# -- 13. performance envelope ---------------------------------------------------------------

def test_criterion_13_performance(criterion, grid, default_data):
    start = time.perf_counter()
    dpr, gt, _ = apply_protection(default_data, "B", "medium", CFG.seed, CFG)
    rep, _, _ = run_pipeline(default_data, dpr, CFG.pipeline(seed=CFG.seed), gt)
    metrics(rep, CFG.tau)
    elapsed = time.perf_counter() - start

    cell = Cell("A", 5, 0.0, 0)
    first, second = run_cell(CFG, cell), run_cell(CFG, cell)

    def digest(doc):
        return json.dumps(doc, sort_keys=True)

    same = digest(first) == digest(second) == digest(
        {k: v for k, v in grid[cell.key].items() if k not in ("config", "config_digest")})
    criterion(13, elapsed <= 300 and same,
              f"n=10,000 assessment {elapsed:.1f}s; repeated cell digests equal: {same} "
              f"(config {config_digest(CFG)})")


# -- 14. feature attribution ----------------------------------------------------------------

def test_criterion_14_attribution(criterion, default_data):
    dpr, _, _ = apply_protection(default_data, "B", "medium", CFG.seed, CFG)
    pipe = CFG.pipeline(seed=CFG.seed)
    _, enc, proj = run_pipeline(default_data, dpr, pipe)
    rep = feature_contribution(proj, enc)
    total = float(rep.contribution.sum())
    qi, non = rep.category.get("QI", 0.0), rep.category.get("non-QI", 0.0)
    by_role = {r: float(sum(c for f, c in zip(rep.features, rep.contribution) if rep.roles[f] == r))
               for r in ("QI", "non-QI")}
    partition = abs(qi + non - 1) <= 1e-9 and abs(qi - by_role["QI"]) <= 1e-12
    ok = abs(total - 1) <= 1e-9 and partition and non >= 0.45
    criterion(14, ok, f"sum {total:.12f}; QI {qi:.3f} + non-QI {non:.3f}; partition={partition}")
