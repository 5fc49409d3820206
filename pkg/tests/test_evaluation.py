from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from linkaudit.data import Dataset, GroundTruth, make_schema
from linkaudit.evaluation import (PipelineConfig, bootstrap_ci, bootstrap_cvpl_ci,
                                  calibrate_threshold, existential_false_link, integrated_risk,
                                  metrics, risk_surface, run_pipeline, self_linkage,
                                  similarity_distributions, worst_case_risk)
from linkaudit.linkage import (AssessmentReport, AssessOptions, BlockingScheme, EncodingConfig,
                               assess_latent, assign_blocks, encode, fit_encoder, fit_projection,
                               naive_maxima, project)
from linkaudit.protection import perturb
from linkaudit.simulator import SimConfig, generate


def _report(max_sim, labels=None):
    m = np.asarray(max_sim, dtype=float)
    n = len(m)
    return AssessmentReport(
        labels=np.array(labels if labels is not None else ["b"] * n, dtype=object),
        candidate_count=np.where(np.isnan(m), 0, 1), max_sim=m,
        argmax=np.where(np.isnan(m), -1, 0), s_minus=np.full((n, 0), np.nan),
        block_summary={}, fingerprint={})


def _unit(deg):
    r = np.deg2rad(np.asarray(deg, dtype=float))
    return np.column_stack([np.cos(r), np.sin(r)])


@pytest.fixture(scope="module")
def hand_toy():
    # records 0,1 share block A with their matches; record 2 is alone with its
    # match in block B; record 3's match sits in block C, so it only sees y2
    la = np.array(["A", "A", "B", "B"], dtype=object)
    lb = np.array(["A", "A", "B", "C"], dtype=object)
    za, zb = _unit([0, 60, 0, 90]), _unit([10, 50, 30, 90])
    return assess_latent(la, lb, za, zb, AssessOptions(), GroundTruth.identity(4))


def test_hand_toy_pair_table(hand_toy):
    c10, c30, c60 = np.cos(np.deg2rad([10, 30, 60]))
    assert np.allclose(hand_toy.max_sim, [c10, c10, c30, c60])
    assert hand_toy.argmax.tolist() == [0, 1, 2, 2]


def test_hand_toy_metrics_at_090(hand_toy):
    m = metrics(hand_toy, 0.9)
    assert m.cvpl_lr == 0.5
    assert m.r_block == 0.75
    assert m.tlr == pytest.approx(2 / 3) and m.r_match == m.tlr
    assert m.r_total == m.r_block * m.r_match
    assert m.precision_at_1 == 0.75
    assert m.flr == 0.0


def test_hand_toy_flr_at_060(hand_toy):
    # records 0 and 1 see a wrong candidate at cos 50 = 0.643; record 3's top is cos 60 = 0.5
    m = metrics(hand_toy, 0.6)
    assert m.flr == 0.5 and m.cvpl_lr == 0.75 and m.tlr == 1.0


def test_identity_release_metrics(medium, scheme):
    rep, _, _ = run_pipeline(medium, medium, PipelineConfig(scheme), GroundTruth.identity(len(medium)))
    m = metrics(rep, 0.99)
    assert m.tlr == 1.0 and m.precision_at_1 == 1.0 and m.r_block == 1.0
    d = similarity_distributions(rep)
    assert np.allclose(d.s_plus, 1.0)


def test_metrics_need_ground_truth():
    with pytest.raises(ValueError):
        metrics(_report([0.5]), 0.5)


def test_all_pairs_split_gives_empty_s_plus():
    la = np.array(["A", "B"], dtype=object)
    lb = np.array(["B", "A"], dtype=object)
    rep = assess_latent(la, lb, _unit([0, 10]), _unit([5, 15]), AssessOptions(), GroundTruth.identity(2))
    d = similarity_distributions(rep)
    assert d.s_plus_empty and len(d.s_plus) == 0 and np.isnan(d.overlap())
    m = metrics(rep, 0.9)
    assert m.r_block == 0.0 and m.tlr == 0.0 and m.flags


def test_overlap_by_quantile_arithmetic():
    from linkaudit.evaluation import SimilarityDistributions
    s_plus = np.linspace(0.8, 1.0, 21)          # 5th percentile = 0.81
    s_minus = np.array([0.5, 0.805, 0.81, 0.9, 0.95])
    d = SimilarityDistributions(s_plus, s_minus, False)
    assert d.overlap() == pytest.approx(3 / 5)


@given(st.integers(0, 2**31 - 1))
def test_recall_identity_holds(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    la = np.array([f"b{v}" for v in rng.integers(0, 3, n)], dtype=object)
    lb = np.array([f"b{v}" for v in rng.integers(0, 3, n)], dtype=object)
    rep = assess_latent(la, lb, rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), AssessOptions(),
                        GroundTruth.identity(n))
    for tau in (0.0, 0.5, 0.9):
        m = metrics(rep, tau)
        assert m.r_total == m.r_block * m.r_match
        assert all(0.0 <= v <= 1.0 for v in (m.cvpl_lr, m.tlr, m.flr, m.precision_at_1, m.r_total))


# -- calibration ------------------------------------------------------------

def test_calibration_ten_values():
    s = np.round(np.arange(1, 11) / 10, 1)
    grid = np.round(np.arange(0, 11) / 10, 1)
    cal = calibrate_threshold(s, 0.2, grid)
    assert cal.tau == 0.9 and cal.exceedance == pytest.approx(0.2) and cal.feasible


def test_calibration_alpha_one_is_grid_minimum():
    cal = calibrate_threshold(np.array([0.95, 0.99]), 1.0)
    assert cal.tau == 0.70


def test_calibration_infeasible_flagged():
    cal = calibrate_threshold(np.full(10, 0.999), 0.05)
    assert not cal.feasible and cal.tau == 0.99


def test_calibration_bonferroni_and_existential():
    cal = calibrate_threshold(np.linspace(0, 1, 101), 0.01, mean_candidates=20)
    assert cal.alpha_bonferroni == pytest.approx(0.0005)
    assert cal.existential == pytest.approx(1 - 0.99 ** 20)
    assert existential_false_link(0.01, 20) == pytest.approx(0.182, abs=5e-4)


def test_calibration_rejects_bad_input():
    with pytest.raises(ValueError):
        calibrate_threshold(np.array([]), 0.05)
    with pytest.raises(ValueError):
        calibrate_threshold(np.array([0.5]), 0.0)


# -- threshold-range summaries ---------------------------------------------

def test_worst_and_integrated_constant():
    rep = _report([1.0] * 5 + [0.0] * 5)
    taus = np.round(np.arange(0.70, 0.995, 0.01), 2)
    assert worst_case_risk(rep, taus) == 0.5
    assert integrated_risk(rep, taus) == pytest.approx(0.5 * (0.99 - 0.70))


def test_integrated_single_point_is_zero():
    assert integrated_risk(_report([1.0]), [0.9]) == 0.0


def test_integrated_step_function():
    rep = _report([0.75, 0.75, 0.0, 0.0])
    taus = np.round(np.arange(0.70, 0.805, 0.01), 2)
    # 0.5 on [0.70, 0.75], one sloped trapezoid to 0 at 0.76, then 0
    assert integrated_risk(rep, taus) == pytest.approx(0.5 * 0.05 + 0.5 * 0.5 * 0.01)


def test_risk_surface_rows_and_csv():
    reps = {"k=2": _report([0.95, 0.8, 0.7]), "k=5": _report([0.99, 0.91, np.nan])}
    surf = risk_surface(reps, [0.75, 0.9, 0.95])
    assert surf.values.tolist() == [[2 / 3, 1 / 3, 1 / 3], [2 / 3, 2 / 3, 1 / 3]]
    assert (np.diff(surf.values, axis=1) <= 0).all()
    lines = surf.to_csv().splitlines()
    assert lines[0] == "lambda,tau,cvpl_lr" and lines[1] == "k=2,0.75,0.666667" and len(lines) == 7
    one = risk_surface({"x": reps["k=2"]}, [0.9])
    assert one.values.shape == (1, 1) and one.values[0, 0] == reps["k=2"].cvpl_lr(0.9)


# -- self-linkage -----------------------------------------------------------

def _onehot_cfg():
    return PipelineConfig(BlockingScheme(()), EncodingConfig(numeric=(), categorical=("c",)),
                          strategy="identity")


def test_self_linkage_duplicates():
    schema = make_schema([("c", "categorical", "analytical")])
    ds = Dataset(schema, {"c": np.array(["a", "a", "b", "c", "d"], dtype=object)})
    rate, _ = self_linkage(ds, _onehot_cfg(), 0.9)
    assert rate == pytest.approx(2 / 5)


def test_self_linkage_orthogonal_rows():
    schema = make_schema([("c", "categorical", "analytical")])
    ds = Dataset(schema, {"c": np.array(list("abcdef"), dtype=object)})
    rate, _ = self_linkage(ds, _onehot_cfg(), 0.9)
    assert rate == 0.0


def test_self_linkage_against_naive_oracle(scheme):
    ds = generate(SimConfig(n_records=300, seed=8))
    cfg = PipelineConfig(scheme)
    rate, rep = self_linkage(ds, cfg, 0.9)
    enc = fit_encoder(ds, ds)
    x = encode(enc, ds)
    proj = fit_projection(x, x)
    z = project(proj, x)
    labels = assign_blocks(ds, scheme)
    best, arg = naive_maxima(labels, labels, z, z, exclude_self=True)
    assert np.array_equal(rep.max_sim, best, equal_nan=True)
    assert np.array_equal(rep.argmax, arg)
    assert rate == np.mean(np.nan_to_num(best, nan=-np.inf) >= 0.9)


def test_self_linkage_needs_two_rows(scheme):
    ds = generate(SimConfig(n_records=1, seed=1))
    with pytest.raises(ValueError):
        self_linkage(ds, PipelineConfig(scheme), 0.9)


# -- bootstrap --------------------------------------------------------------

def test_bootstrap_single_resample_collapses():
    rep = _report(np.r_[np.ones(30), np.zeros(70)])
    lo, hi = bootstrap_ci(lambda r: r.cvpl_lr(0.5), rep, B=1, seed=3, block_aware=False)
    assert lo == hi


def test_bootstrap_deterministic_and_fast_path_agrees():
    rng = np.random.default_rng(0)
    labels = [f"b{v}" for v in rng.integers(0, 8, 200)]
    rep = _report(rng.random(200), labels)
    for block_aware in (True, False):
        a = bootstrap_ci(lambda r: r.cvpl_lr(0.6), rep, B=50, seed=9, block_aware=block_aware)
        b = bootstrap_ci(lambda r: r.cvpl_lr(0.6), rep, B=50, seed=9, block_aware=block_aware)
        c = bootstrap_cvpl_ci(rep, 0.6, B=50, seed=9, block_aware=block_aware)
        assert a == b == c


def test_bootstrap_block_aware_resamples_whole_blocks():
    from linkaudit.evaluation import resample_indices
    labels = ["a"] * 3 + ["b"] * 5 + ["c"] * 2
    rep = _report(np.zeros(10), labels)
    idx = resample_indices(rep, np.random.default_rng(1), True)
    counts = {lab: sum(1 for i in idx if labels[i] == lab) for lab in "abc"}
    assert all(counts[lab] % labels.count(lab) == 0 for lab in "abc")


def test_bootstrap_coverage_bernoulli():
    rng = np.random.default_rng(2024)
    hits = 0
    for trial in range(200):
        x = (rng.random(500) < 0.3).astype(float)
        lo, hi = bootstrap_cvpl_ci(_report(x), 0.5, B=100, block_aware=False, seed=trial)
        hits += lo <= 0.3 <= hi
    assert 0.88 <= hits / 200 <= 0.99


def test_bootstrap_rejects_zero_resamples():
    with pytest.raises(ValueError):
        bootstrap_ci(lambda r: 0.0, _report([1.0]), B=0)


# -- consistency ------------------------------------------------------------

def test_cvpl_spread_shrinks_with_n(scheme):
    def spread(n):
        vals = []
        for seed in range(20):
            dor = generate(SimConfig(n_records=n, seed=100 + seed))
            dpr, gt = perturb(dor, "medium", seed=seed)
            rep, _, _ = run_pipeline(dor, dpr, PipelineConfig(scheme), gt)
            vals.append(rep.cvpl_lr(0.9))
        return np.std(vals)

    assert spread(5000) < spread(500)
