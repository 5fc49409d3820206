"""Seeded marketing-touchpoint generator with conditional dependencies and anomalies.

Records are drawn along a fixed conditional chain::

    demographics -> channel | region, age, gender
                 -> lag | channel, age
                 -> product, place | channel, demographics
                 -> purchase time = t0 + lag + weekday/diurnal effects + noise

Every draw comes from one ``numpy.random.Generator`` stream seeded by
``SimConfig.seed``; the model's own random parameters (channel tilts, product
tilts) come from a second stream derived from the same seed, so a config fully
determines its output.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .data import Attribute, AttributeSchema, Dataset

DAY = 86_400
HOUR = 3_600
# 2024-01-01 00:00:00 UTC (a Monday)
DEFAULT_T0 = 1_704_067_200
RARE_CHANNEL = "Affiliate"
ANOMALY_TYPES = ("rare_channel", "long_tail_product", "off_hours", "lag_outlier")

SCHEMA = AttributeSchema(
    (
        Attribute("person_id", "categorical", "hidden-id"),
        Attribute("age", "numeric", "quasi-identifier"),
        Attribute("gender", "categorical", "quasi-identifier"),
        Attribute("region", "categorical", "quasi-identifier"),
        Attribute("brand_product", "categorical", "analytical"),
        Attribute("purchase_place", "categorical", "analytical"),
        Attribute("purchase_time", "timestamp", "analytical"),
        Attribute("days_after_ad", "numeric", "analytical"),
        Attribute("ad_channel", "categorical", "analytical"),
    )
)


def _diurnal_default() -> list[float]:
    # overnight trough, lunchtime bump, evening peak
    return [0.3, 0.2, 0.15, 0.1, 0.1, 0.2, 0.5, 0.9, 1.2, 1.4, 1.6, 1.8,
            2.0, 1.8, 1.6, 1.6, 1.7, 1.9, 2.3, 2.6, 2.5, 2.0, 1.3, 0.7]


@dataclass(frozen=True)
class SimConfig:
    n_records: int = 10_000
    seed: int = 42
    age_mean: float = 42.0
    age_std: float = 15.0
    age_min: float = 18.0
    age_max: float = 80.0
    region_level1: tuple[str, ...] = ("North", "South", "East", "West")
    region_level1_weights: tuple[float, ...] = (0.3, 0.25, 0.25, 0.2)
    region_level2: tuple[str, ...] = ("Urban", "Suburban", "Rural")
    region_level2_weights: tuple[float, ...] = (0.45, 0.35, 0.2)
    genders: tuple[str, ...] = ("F", "M", "Other")
    gender_weights: tuple[float, ...] = (0.49, 0.47, 0.04)
    channels: tuple[str, ...] = ("Search", "Social", "Video", "Display", "Email")
    channel_weights: tuple[float, ...] = (0.3, 0.25, 0.2, 0.15, 0.1)
    channel_tilt_sd: float = 0.3
    places: tuple[str, ...] = ("Online", "Mall", "Supermarket", "Specialty")
    n_products: int = 50
    product_zipf_alpha: float = 1.5
    product_tilt_sd: float = 0.2
    t0: int = DEFAULT_T0
    lag_mean_days: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)
    lag_shape: float = 2.0
    lag_age_slope: float = 0.01
    diurnal_profile: tuple[float, ...] = field(default_factory=lambda: tuple(_diurnal_default()))
    weekly_profile: tuple[float, ...] = (1.0, 0.9, 0.9, 1.0, 1.2, 1.6, 1.4)
    time_noise_sd: float = 900.0
    outlier_fraction: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                object.__setattr__(self, f.name, tuple(v))
        self.validate()

    def validate(self) -> None:
        def bad(name, why):
            raise ValueError(f"SimConfig.{name}: {why}")

        if int(self.n_records) < 1:
            bad("n_records", "must be >= 1")
        if not self.age_std > 0:
            bad("age_std", "must be positive")
        if not self.age_min < self.age_mean < self.age_max:
            bad("age_mean", "need age_min < age_mean < age_max")
        for name, labels, weights in (
            ("channel_weights", self.channels, self.channel_weights),
            ("region_level1_weights", self.region_level1, self.region_level1_weights),
            ("region_level2_weights", self.region_level2, self.region_level2_weights),
            ("gender_weights", self.genders, self.gender_weights),
        ):
            if len(labels) != len(weights):
                bad(name, f"{len(weights)} weights for {len(labels)} labels")
            if any(w <= 0 for w in weights):
                bad(name, "weights must be positive")
            if abs(sum(weights) - 1.0) > 1e-9:
                bad(name, f"weights sum to {sum(weights)!r}, expected 1")
        if len(self.lag_mean_days) != len(self.channels):
            bad("lag_mean_days", "one mean per channel required")
        if any(m <= 0 for m in self.lag_mean_days):
            bad("lag_mean_days", "means must be positive")
        if len(self.diurnal_profile) != 24 or any(w <= 0 for w in self.diurnal_profile):
            bad("diurnal_profile", "need 24 positive weights")
        if len(self.weekly_profile) != 7 or any(w <= 0 for w in self.weekly_profile):
            bad("weekly_profile", "need 7 positive weights")
        if self.n_products < 1:
            bad("n_products", "must be >= 1")
        if self.product_zipf_alpha <= 0:
            bad("product_zipf_alpha", "must be positive")
        if self.time_noise_sd < 0:
            bad("time_noise_sd", "must be non-negative")
        if not 0 <= self.outlier_fraction <= 0.5:
            bad("outlier_fraction", "must lie in [0, 0.5]")

    @property
    def regions(self) -> list[str]:
        return [f"{a}/{b}" for a in self.region_level1 for b in self.region_level2]

    @property
    def products(self) -> list[str]:
        width = max(2, len(str(self.n_products)))
        return [f"P{r:0{width}d}" for r in range(1, self.n_products + 1)]


def truncated_normal(rng: np.random.Generator, n: int, mean: float, sd: float,
                     lo: float, hi: float) -> np.ndarray:
    """Rejection sampling from N(mean, sd) restricted to [lo, hi]."""
    out = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        draw = rng.normal(mean, sd, size=max(2 * need, 16))
        draw = draw[(draw >= lo) & (draw <= hi)][:need]
        out[filled:filled + len(draw)] = draw
        filled += len(draw)
    return out


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """Row-wise categorical draws from an (n, K) matrix of probabilities."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(len(probs))[:, None]
    return (u > cdf).sum(axis=1)


def _model_parameters(cfg: SimConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    n_ch = len(cfg.channels)
    n_dec = int(cfg.age_max // 10) + 1
    return {
        "ch_region": rng.normal(0, cfg.channel_tilt_sd, (len(cfg.regions), n_ch)),
        "ch_decade": rng.normal(0, cfg.channel_tilt_sd, (n_dec, n_ch)),
        "ch_gender": rng.normal(0, cfg.channel_tilt_sd, (len(cfg.genders), n_ch)),
        "prod_channel": rng.normal(0, cfg.product_tilt_sd, (n_ch, cfg.n_products)),
        "prod_decade": rng.normal(0, cfg.product_tilt_sd, (n_dec, cfg.n_products)),
        "place_channel": rng.normal(0, 0.5, (n_ch, len(cfg.places))),
        "place_level2": rng.normal(0, 0.5, (len(cfg.region_level2), len(cfg.places))),
    }


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def generate(config: SimConfig | None = None) -> Dataset:
    """Draw ``config.n_records`` rows; identical configs give identical datasets.

    When ``config.outlier_fraction`` is positive, anomalies are injected with a
    seed derived from ``config.seed``.
    """
    cfg = config or SimConfig()
    n = int(cfg.n_records)
    rng = np.random.default_rng(cfg.seed)
    par = _model_parameters(cfg)

    # 1. demographics; the urban share falls with age so QIs are correlated
    age = np.round(truncated_normal(rng, n, cfg.age_mean, cfg.age_std, cfg.age_min, cfg.age_max))
    gender = rng.choice(len(cfg.genders), size=n, p=np.asarray(cfg.gender_weights))
    lvl1 = rng.choice(len(cfg.region_level1), size=n, p=np.asarray(cfg.region_level1_weights))
    l2_logits = np.log(np.asarray(cfg.region_level2_weights))[None, :].repeat(n, 0)
    l2_logits[:, 0] -= 0.02 * (age - cfg.age_mean)
    l2_logits[:, -1] += 0.02 * (age - cfg.age_mean)
    lvl2 = _categorical(rng, _softmax_rows(l2_logits))
    region = lvl1 * len(cfg.region_level2) + lvl2
    decade = (age // 10).astype(int)

    # 2. channel | region, age decade, gender: marginal weights times log-linear tilts,
    #    recalibrated so the tilts leave the population marginal alone
    ch_logits = (
        np.log(np.asarray(cfg.channel_weights))[None, :]
        + par["ch_region"][region]
        + par["ch_decade"][decade]
        + par["ch_gender"][gender]
    )
    # per-channel offsets so the expected marginal equals channel_weights
    target = np.asarray(cfg.channel_weights)
    for _ in range(50):
        probs = _softmax_rows(ch_logits)
        gap = np.log(target / probs.mean(axis=0))
        if np.abs(gap).max() < 1e-12:
            break
        ch_logits = ch_logits + gap[None, :]
    channel = _categorical(rng, _softmax_rows(ch_logits))

    # 3. lag | channel, age: gamma with channel mean, older buyers slower
    mean_lag = np.asarray(cfg.lag_mean_days)[channel] * (
        1.0 + cfg.lag_age_slope * np.maximum(age - 40.0, 0.0)
    )
    lag = rng.gamma(cfg.lag_shape, mean_lag / cfg.lag_shape)

    # 4. product | channel, age decade (Zipf base); place | channel, urbanity
    ranks = np.arange(1, cfg.n_products + 1, dtype=float)
    prod_logits = (
        -cfg.product_zipf_alpha * np.log(ranks)[None, :]
        + par["prod_channel"][channel]
        + par["prod_decade"][decade]
    )
    product = _categorical(rng, _softmax_rows(prod_logits))
    place = _categorical(rng, _softmax_rows(par["place_channel"][channel] + par["place_level2"][lvl2]))

    # 5. time = t0 + lag, moved forward to a weekday drawn from the weekly profile,
    #    at an hour drawn from the diurnal profile, plus Gaussian noise
    base_day = (cfg.t0 + np.floor(lag * DAY).astype(np.int64)) // DAY
    dow = (base_day + 3) % 7  # 1970-01-01 was a Thursday; Monday = 0
    wk = np.asarray(cfg.weekly_profile) / np.sum(cfg.weekly_profile)
    target_dow = rng.choice(7, size=n, p=wk)
    day = base_day + (target_dow - dow) % 7
    dp = np.asarray(cfg.diurnal_profile) / np.sum(cfg.diurnal_profile)
    hour = rng.choice(24, size=n, p=dp)
    second = rng.integers(0, HOUR, size=n)
    noise = np.rint(rng.normal(0.0, cfg.time_noise_sd, size=n)).astype(np.int64)
    t = day * DAY + hour * HOUR + second + noise
    t = np.maximum(t, cfg.t0)

    ds = Dataset(
        SCHEMA,
        {
            "person_id": np.array([f"id{i:06d}" for i in range(n)], dtype=object),
            "age": age,
            "gender": np.asarray(cfg.genders, dtype=object)[gender],
            "region": np.asarray(cfg.regions, dtype=object)[region],
            "brand_product": np.asarray(cfg.products, dtype=object)[product],
            "purchase_place": np.asarray(cfg.places, dtype=object)[place],
            "purchase_time": t.astype(np.int64),
            "days_after_ad": np.round(lag, 6),
            "ad_channel": np.asarray(cfg.channels, dtype=object)[channel],
        },
        provenance=f"simulated n={n} seed={cfg.seed}",
    )
    if cfg.outlier_fraction > 0:
        ds = inject_anomalies(ds, cfg.outlier_fraction, seed=cfg.seed + 1, config=cfg)
    return ds


def inject_anomalies(dataset: Dataset, p_out: float, seed: int,
                     config: SimConfig | None = None) -> Dataset:
    """Modify exactly ``round(p_out * n)`` rows, one anomaly type per row.

    Types (drawn uniformly): a channel label never produced by ``generate``,
    a product from the rarest ranks (> 45 when there are 50), a purchase hour
    forced into 02:00-04:59, or a lag reset to 0 or 60 days.
    """
    if not 0 <= p_out <= 0.5:
        raise ValueError(f"p_out must lie in [0, 0.5], got {p_out}")
    cfg = config or SimConfig()
    n = len(dataset)
    n_mod = int(round(p_out * n))
    if n_mod == 0:
        return dataset
    rng = np.random.default_rng([seed, 0xA70])
    rows = np.sort(rng.choice(n, size=n_mod, replace=False))
    kinds = rng.integers(0, len(ANOMALY_TYPES), size=n_mod)

    channel = np.array(dataset["ad_channel"], dtype=object)
    product = np.array(dataset["brand_product"], dtype=object)
    t = np.array(dataset["purchase_time"], dtype=np.int64)
    lag = np.array(dataset["days_after_ad"], dtype=float)
    products = cfg.products
    tail_start = min(45, max(len(products) - 1, 0))

    r = rows[kinds == 0]
    channel[r] = RARE_CHANNEL
    r = rows[kinds == 1]
    tail = np.asarray(products, dtype=object)[tail_start:]
    pick = rng.integers(0, len(tail), size=len(r))
    # a row already holding the drawn tail product moves to the next one
    same = tail[pick] == product[r]
    if len(tail) > 1:
        pick[same] = (pick[same] + 1) % len(tail)
    product[r] = tail[pick]
    r = rows[kinds == 2]
    day_start = (t[r] // DAY) * DAY
    new_t = np.maximum(day_start + rng.integers(2, 5, size=len(r)) * HOUR
                       + rng.integers(0, HOUR, size=len(r)), cfg.t0)
    new_t[new_t == t[r]] += 1
    t[r] = new_t
    r = rows[kinds == 3]
    new_lag = np.where(rng.random(len(r)) < 0.5, 0.0, 60.0)
    t[r] = np.maximum(t[r] + np.rint((new_lag - lag[r]) * DAY).astype(np.int64), cfg.t0)
    lag[r] = new_lag

    return dataset.replace(
        ad_channel=channel,
        brand_product=product,
        purchase_time=t,
        days_after_ad=lag,
        provenance=f"{dataset.provenance} + anomalies p_out={p_out}",
    )
