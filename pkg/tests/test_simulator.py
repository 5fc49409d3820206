from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from linkaudit.data import dataset_to_csv
from linkaudit.simulator import (ANOMALY_TYPES, DAY, HOUR, RARE_CHANNEL, SCHEMA, SimConfig,
                                 generate, inject_anomalies)


def test_default_size_and_age_range(full):
    assert len(full) == 10_000
    assert full["age"].min() >= 18 and full["age"].max() <= 80
    assert sorted(int(v.removeprefix("id")) for v in full["person_id"]) == list(range(10_000))


def test_schema_matches_declared(full):
    assert full.schema == SCHEMA
    assert SCHEMA.hidden_id == "person_id"


def test_byte_identical_on_repeat():
    cfg = SimConfig(n_records=500, seed=11, outlier_fraction=0.05)
    assert dataset_to_csv(generate(cfg)) == dataset_to_csv(generate(cfg))


def test_seed_changes_output():
    a = generate(SimConfig(n_records=200, seed=1))
    b = generate(SimConfig(n_records=200, seed=2))
    assert dataset_to_csv(a) != dataset_to_csv(b)


def test_channel_marginal_within_three_se(full):
    cfg = SimConfig()
    n = len(full)
    for label, w in zip(cfg.channels, cfg.channel_weights):
        se = np.sqrt(w * (1 - w) / n)
        assert abs(np.mean(full["ad_channel"] == label) - w) <= 3 * se, label


def test_channel_depends_on_region(full):
    cfg = SimConfig()
    tab = np.array([[np.sum((full["region"] == r) & (full["ad_channel"] == c))
                     for c in cfg.channels] for r in cfg.regions])
    chi2, _, dof, _ = stats.chi2_contingency(tab)
    assert chi2 > stats.chi2.ppf(0.99, dof)


def test_product_zipf_slope(full):
    _, counts = np.unique(full["brand_product"], return_counts=True)
    top = np.sort(counts)[::-1][:20]
    slope = np.polyfit(np.log(np.arange(1, 21)), np.log(top), 1)[0]
    assert abs(slope + SimConfig().product_zipf_alpha) <= 0.3


def test_timestamps_after_t0_and_diurnal(full):
    cfg = SimConfig()
    t = full["purchase_time"]
    assert t.min() >= cfg.t0
    hours = (t % DAY) // HOUR
    hist = np.bincount(hours.astype(int), minlength=24)
    rho = stats.spearmanr(hist, cfg.diurnal_profile).statistic
    assert rho > 0.5


def test_lag_is_positive_and_grows_with_channel(full):
    lag = full["days_after_ad"]
    assert (lag >= 0).all()
    means = [lag[full["ad_channel"] == c].mean() for c in SimConfig().channels]
    assert means == sorted(means)


def test_invalid_config_names_field():
    with pytest.raises(ValueError, match="channel_weights"):
        SimConfig(channel_weights=(0.5, 0.5, 0.1, 0.1, 0.1))
    with pytest.raises(ValueError, match="age_mean"):
        SimConfig(age_mean=90.0)
    with pytest.raises(ValueError, match="diurnal_profile"):
        SimConfig(diurnal_profile=tuple([1.0] * 23))


def test_anomalies_zero_fraction_is_identity(small):
    assert inject_anomalies(small, 0.0, seed=1) is small


@pytest.mark.parametrize("p_out", [0.0, 0.01, 0.05])
def test_anomaly_grid_levels_accepted(small, p_out):
    out = inject_anomalies(small, p_out, seed=4)
    assert len(out) == len(small)


def _changed_rows(a, b):
    return np.array([ra != rb for ra, rb in zip(a.rows, b.rows)])


def test_anomalies_exact_count(full):
    out = inject_anomalies(full, 0.05, seed=9)
    changed = _changed_rows(full, out)
    assert changed.sum() == 500
    assert set(np.unique(out["ad_channel"][changed])) <= set(SimConfig().channels) | {RARE_CHANNEL}


def test_anomalies_leave_other_rows_untouched(small):
    out = inject_anomalies(small, 0.1, seed=2)
    changed = _changed_rows(small, out)
    keep = np.flatnonzero(~changed)
    assert small.take(keep).rows == out.take(keep).rows
    assert changed.sum() == round(0.1 * len(small))


def test_anomaly_types_cover_list(full):
    out = inject_anomalies(full, 0.05, seed=3)
    assert len(ANOMALY_TYPES) == 4
    assert (out["ad_channel"] == RARE_CHANNEL).sum() > 0

    def off_hours(ds):
        h = (ds["purchase_time"] % DAY) // HOUR
        return ((h >= 2) & (h <= 4)).sum()

    assert off_hours(out) > off_hours(full)


def test_anomaly_fraction_out_of_range(small):
    with pytest.raises(ValueError):
        inject_anomalies(small, 0.6, seed=0)
