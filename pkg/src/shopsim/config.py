"""Simulation configuration: schema, validation, file loading and hashing.

The config file is YAML with a ``sim`` section (everything the simulator
needs) plus optional workflow sections (``collect``, ``train``, ``eval``,
``tune``, ``sweep``) consumed by the CLI. All parameter distributions that
the data generators draw from are defined here, so the config schema doubles
as the documentation of those choices.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Invalid configuration value or file."""


@dataclass(frozen=True)
class PricingConfig:
    """Two-state (regular/discount) shelf-pricing chain per product.

    Fresh discount depths are drawn from a truncated normal on
    [depth_min, depth_max) whenever a product enters the discount regime.
    """

    stay_regular: float = 0.85
    stay_discount: float = 0.50
    depth_mean: float = 0.30
    depth_width: float = 0.10
    depth_min: float = 0.05
    depth_max: float = 0.60

    def validate(self) -> None:
        for name in ("stay_regular", "stay_discount"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"pricing.{name} must be in [0,1], got {p}")
        if not 0.0 <= self.depth_min < self.depth_max < 1.0:
            raise ConfigError("pricing depth bounds must satisfy 0 <= min < max < 1")
        if self.depth_width <= 0.0:
            raise ConfigError("pricing.depth_width must be > 0")


@dataclass(frozen=True)
class CatalogPriors:
    """Distributions for product- and category-level coefficients.

    base_price: lognormal around ``base_price_median``.
    z: unobserved product factor, Normal(0, z_sigma).
    price_factor: product-side price-sensitivity factor, lognormal(0, sigma),
        strictly positive so the combined customer x product coefficient keeps
        the customer's (negative) sign.
    qty_intercept / cate_intercept / cate_slope: intercepts and slopes of the
        quantity and category-purchase stages.
    """

    base_price_median: float = 3.0
    base_price_sigma: float = 0.45
    z_sigma: float = 1.0
    price_factor_sigma: float = 0.25
    qty_intercept_mean: float = -0.4
    qty_intercept_sigma: float = 0.2
    cate_intercept_mean: float = -3.2
    cate_intercept_sigma: float = 0.3
    cate_slope_low: float = 0.25
    cate_slope_high: float = 0.50

    def validate(self) -> None:
        if self.base_price_median <= 0:
            raise ConfigError("catalog.base_price_median must be > 0")
        for name in ("base_price_sigma", "z_sigma", "price_factor_sigma",
                     "qty_intercept_sigma", "cate_intercept_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"catalog.{name} must be >= 0")
        if self.cate_slope_low > self.cate_slope_high:
            raise ConfigError("catalog.cate_slope range is inverted")


@dataclass(frozen=True)
class CustomerPriors:
    """Distributions for per-customer coefficients.

    price_coef: |customer price factor|, lognormal(logmean, logsigma) capped
        at price_coef_cap and negated, so every customer has coefficient <= 0.
    store_intercept: Gumbel(loc, scale) store-visit intercept.
    browse_carryover: weight of last visit's store score in the next visit
        utility (uniform range; collapse the range for a shared constant).
    marketing_coef: store-marketing coefficient, uniform.
    inertia: autoregressive weight on the previous visit probability.
    qty_slope: utility slope of the quantity stage, uniform.
    """

    beta_x_low: float = 0.0
    beta_x_high: float = 1.0
    beta_z_sigma: float = 0.25
    price_coef_logmean: float = 0.5
    price_coef_logsigma: float = 0.7
    price_coef_cap: float = 6.0
    store_intercept_loc: float = -2.0
    store_intercept_scale: float = 0.1
    browse_carryover_low: float = 0.20
    browse_carryover_high: float = 0.20
    marketing_coef_low: float = 0.004
    marketing_coef_high: float = 0.006
    inertia_low: float = 0.70
    inertia_high: float = 0.95
    qty_slope_low: float = 0.15
    qty_slope_high: float = 0.25

    def validate(self) -> None:
        pairs = [("beta_x_low", "beta_x_high"), ("browse_carryover_low", "browse_carryover_high"),
                 ("marketing_coef_low", "marketing_coef_high"), ("inertia_low", "inertia_high"),
                 ("qty_slope_low", "qty_slope_high")]
        for lo, hi in pairs:
            if getattr(self, lo) > getattr(self, hi):
                raise ConfigError(f"customers.{lo} > customers.{hi}")
        if not 0.0 <= self.inertia_low <= self.inertia_high <= 1.0:
            raise ConfigError("customers.inertia range must lie in [0,1]")
        if self.beta_z_sigma < 0 or self.price_coef_logsigma < 0:
            raise ConfigError("customer sigma parameters must be >= 0")
        if self.price_coef_cap <= 0:
            raise ConfigError("customers.price_coef_cap must be > 0")
        if self.store_intercept_scale <= 0:
            raise ConfigError("customers.store_intercept_scale must be > 0")


@dataclass(frozen=True)
class MarketingConfig:
    """I.i.d. uniform marketing intensities drawn each step."""

    product_low: float = 0.0
    product_high: float = 1.0
    store_low: float = 0.0
    store_high: float = 1.0

    def validate(self) -> None:
        if self.product_low > self.product_high or self.store_low > self.store_high:
            raise ConfigError("marketing ranges are inverted")


@dataclass(frozen=True)
class SimConfig:
    """Immutable parameters of one simulated world."""

    n_customers: int = 10_000
    n_products: int = 2514
    n_categories: int = 100
    horizon: int = 50
    rng_seed: int = 0
    action_grid: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    max_quantity_rate: float = 1e3
    pricing: PricingConfig = field(default_factory=PricingConfig)
    catalog: CatalogPriors = field(default_factory=CatalogPriors)
    customers: CustomerPriors = field(default_factory=CustomerPriors)
    marketing: MarketingConfig = field(default_factory=MarketingConfig)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.n_categories < 1 or self.n_products < self.n_categories:
            raise ConfigError("need n_products >= n_categories >= 1")
        if self.n_customers < 1:
            raise ConfigError("n_customers must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if len(self.action_grid) == 0:
            raise ConfigError("action_grid must not be empty")
        for d in self.action_grid:
            if not 0.0 <= d < 1.0:
                raise ConfigError(f"coupon fraction {d} outside [0,1)")
        if self.max_quantity_rate <= 0:
            raise ConfigError("max_quantity_rate must be > 0")
        self.pricing.validate()
        self.catalog.validate()
        self.customers.validate()
        self.marketing.validate()

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["action_grid"] = list(self.action_grid)
        return d

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "SimConfig":
        raw = dict(raw)
        try:
            for key, sub in (("pricing", PricingConfig), ("catalog", CatalogPriors),
                             ("customers", CustomerPriors), ("marketing", MarketingConfig)):
                if key in raw and isinstance(raw[key], dict):
                    raw[key] = sub(**raw[key])
            if "action_grid" in raw:
                raw["action_grid"] = tuple(float(x) for x in raw["action_grid"])
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    def replace(self, **kwargs: Any) -> "SimConfig":
        cfg = dataclasses.replace(self, **kwargs)
        cfg.validate()
        return cfg


def config_hash(cfg: SimConfig) -> str:
    """Stable short hash of a config, for artifact provenance."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path) -> dict[str, Any]:
    """Load the YAML config file and return its raw section dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return raw


def sim_config_from_file(path: str | Path, seed_override: int | None = None) -> SimConfig:
    raw = load_config(path)
    sim = raw.get("sim", {})
    cfg = SimConfig.from_dict(sim)
    if seed_override is not None:
        cfg = cfg.replace(rng_seed=int(seed_override))
    return cfg
