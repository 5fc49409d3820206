from __future__ import annotations

import numpy as np
import pytest

from linkaudit.attribution import (GROUPS, contribution_stability, feature_contribution,
                                   fit_contribution)
from linkaudit.data import Dataset, make_schema
from linkaudit.evaluation import PipelineConfig
from linkaudit.linkage import EncodingConfig, encode, fit_encoder, fit_projection
from linkaudit.protection import perturb


def _numeric(cols, roles=None):
    roles = roles or {}
    schema = make_schema([(n, "numeric", roles.get(n, "analytical")) for n in cols])
    return Dataset(schema, {n: np.asarray(v, float) for n, v in cols.items()})


def _contrib(ds, scale=None):
    cfg = EncodingConfig(numeric=tuple(ds.schema.names), categorical=())
    enc = fit_encoder(ds, ds, cfg)
    x = encode(enc, ds)
    if scale is not None:
        x = x * np.asarray(scale)
    proj = fit_projection(x, None, 0.9, min_components=1)
    return feature_contribution(proj, enc)


def test_single_attribute_is_everything():
    rep = _contrib(_numeric({"x": np.random.default_rng(0).normal(size=50)}))
    assert rep.attributes == {"x": pytest.approx(1.0)}


def test_two_independent_attributes_split_evenly():
    rng = np.random.default_rng(1)
    rep = _contrib(_numeric({"a": rng.normal(size=20_000), "b": rng.normal(size=20_000)}))
    assert rep.attributes["a"] == pytest.approx(0.5, abs=0.02)
    assert sum(rep.contribution) == pytest.approx(1.0, abs=1e-12)


def test_prescaling_has_no_effect_but_post_scaling_dominates():
    rng = np.random.default_rng(2)
    base = {"a": rng.normal(size=2000), "b": rng.normal(size=2000), "c": rng.normal(size=2000)}
    r1 = _contrib(_numeric(base))
    r2 = _contrib(_numeric({**base, "a": base["a"] * 100}))
    assert np.allclose(r1.contribution, r2.contribution, atol=1e-12)
    r3 = _contrib(_numeric(base), scale=[100.0, 1.0, 1.0])
    assert r3.attributes["a"] > max(r3.attributes["b"], r3.attributes["c"])


def test_identity_projection_rejected(small):
    enc = fit_encoder(small, small)
    proj = fit_projection(encode(enc, small), strategy="identity")
    with pytest.raises(ValueError):
        feature_contribution(proj, enc)


def test_dimension_mismatch_rejected(small):
    enc = fit_encoder(small, small)
    proj = fit_projection(np.random.default_rng(0).normal(size=(30, 4)))
    with pytest.raises(ValueError):
        feature_contribution(proj, enc)


@pytest.fixture(scope="module")
def simulated_report(full, scheme):
    dpr, _ = perturb(full, "medium", seed=1)
    return fit_contribution(full, dpr, PipelineConfig(scheme))


def test_rollups_partition_total(simulated_report):
    rep = simulated_report
    assert np.all(rep.contribution >= 0)
    assert sum(rep.contribution) == pytest.approx(1.0, abs=1e-9)
    assert sum(rep.category.values()) == pytest.approx(1.0, abs=1e-9)
    assert sum(rep.groups.values()) == pytest.approx(1.0, abs=1e-9)
    qi = sum(c for f, c in zip(rep.features, rep.contribution) if rep.roles[f] == "QI")
    assert rep.category["QI"] == pytest.approx(qi, abs=1e-15)
    assert set(rep.roles[f] for f in ("age", "gender", "region")) == {"QI"}
    assert rep.groups["temporal patterns"] == pytest.approx(
        sum(c for f, c in zip(rep.features, rep.contribution) if GROUPS.get(f) == "temporal patterns"))


def test_non_qi_share_leads(simulated_report):
    assert simulated_report.category["non-QI"] >= 0.45


def test_csv_layout(simulated_report):
    lines = simulated_report.with_sd(np.zeros(len(simulated_report.features))).to_csv().splitlines()
    assert lines[0] == "attribute,contribution,sd,category"
    assert len(lines) == len(simulated_report.features) + 1
    assert lines[1].split(",")[3] in ("QI", "non-QI")


def test_stability_identical_resamples_zero(medium, scheme):
    dpr, _ = perturb(medium, "low", seed=1)
    sd = contribution_stability(medium, dpr, PipelineConfig(scheme), B=2, seed=3, streams=[7, 7])
    assert np.all(sd == 0.0)


def test_stability_finite(medium, scheme):
    dpr, _ = perturb(medium, "low", seed=1)
    sd = contribution_stability(medium, dpr, PipelineConfig(scheme), B=5, seed=3)
    assert np.all(np.isfinite(sd)) and np.any(sd > 0)


def test_stability_needs_two_resamples(medium, scheme):
    with pytest.raises(ValueError):
        contribution_stability(medium, medium, PipelineConfig(scheme), B=1)
