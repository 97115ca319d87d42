"""Synthetic product catalog, customer population and shelf-pricing process."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import truncnorm

from .config import PricingConfig, SimConfig
from .seeds import TAG_CATALOG, TAG_POPULATION, stream

CATALOG_FORMAT = "shopsim-world-v1"


@dataclass(frozen=True)
class Catalog:
    """Per-product and per-category coefficients. Products are stored sorted
    by category so each category occupies one contiguous index range."""

    category_id: np.ndarray      # (P,) int32
    base_price: np.ndarray       # (P,) > 0
    z: np.ndarray                # (P,) unobserved factor
    price_factor: np.ndarray     # (P,) > 0, product side of the price coefficient
    qty_intercept: np.ndarray    # (P,) quantity-stage intercept
    cate_intercept: np.ndarray   # (J,) category purchase intercept
    cate_slope: np.ndarray       # (J,) category purchase slope
    cat_starts: np.ndarray       # (J,) first product index of each category
    cat_counts: np.ndarray       # (J,) products per category

    @property
    def n_products(self) -> int:
        return self.base_price.shape[0]

    @property
    def n_categories(self) -> int:
        return self.cate_intercept.shape[0]

    def log_base_price(self) -> np.ndarray:
        return np.log(self.base_price)


@dataclass(frozen=True)
class CustomerPopulation:
    """Per-customer coefficient draws. ``customer_id`` keys the per-customer
    random streams, so a slice of a population keeps its identities."""

    customer_id: np.ndarray        # (N,) int64 global ids
    beta_x: np.ndarray             # (N,) marketing-feature coefficient
    beta_z: np.ndarray             # (N,) loading on the unobserved factor
    beta_w: np.ndarray             # (N,) price factor, <= 0
    store_intercept: np.ndarray    # (N,) visit utility intercept
    browse_carryover: np.ndarray   # (N,) weight on last visit's store score
    marketing_coef: np.ndarray     # (N,) store-marketing coefficient
    inertia: np.ndarray            # (N,) in [0,1]
    qty_slope: np.ndarray          # (N,) quantity-stage utility slope

    def __len__(self) -> int:
        return self.customer_id.shape[0]

    def slice(self, start: int, stop: int) -> "CustomerPopulation":
        return CustomerPopulation(
            **{f: getattr(self, f)[start:stop] for f in self.__dataclass_fields__})


@dataclass
class PricingState:
    """Mutable shelf-pricing state: regime, depth and resulting price."""

    in_discount: np.ndarray   # (P,) bool
    depth: np.ndarray         # (P,) in [0,1), 0 when regular
    shelf_price: np.ndarray   # (P,) = base * (1 - depth)

    def copy(self) -> "PricingState":
        return PricingState(self.in_discount.copy(), self.depth.copy(),
                            self.shelf_price.copy())


def category_sizes(n_products: int, n_categories: int) -> np.ndarray:
    """Even split with the remainder spread one-per-category from the front."""
    q, r = divmod(n_products, n_categories)
    sizes = np.full(n_categories, q, dtype=np.int64)
    sizes[:r] += 1
    return sizes


def generate_catalog(cfg: SimConfig, rng: np.random.Generator | None = None) -> Catalog:
    """Draw a product catalog from the configured priors.

    Deterministic for a fixed config seed when ``rng`` is omitted.
    """
    cfg.validate()
    if rng is None:
        rng = stream(cfg.rng_seed, TAG_CATALOG)
    P, J = cfg.n_products, cfg.n_categories
    pri = cfg.catalog

    sizes = category_sizes(P, J)
    category_id = np.repeat(np.arange(J, dtype=np.int32), sizes)
    cat_starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))

    base_price = pri.base_price_median * np.exp(rng.normal(0.0, pri.base_price_sigma, P))
    z = rng.normal(0.0, pri.z_sigma, P)
    price_factor = np.exp(rng.normal(0.0, pri.price_factor_sigma, P))
    qty_intercept = rng.normal(pri.qty_intercept_mean, pri.qty_intercept_sigma, P)
    cate_intercept = rng.normal(pri.cate_intercept_mean, pri.cate_intercept_sigma, J)
    cate_slope = rng.uniform(pri.cate_slope_low, pri.cate_slope_high, J)

    return Catalog(category_id=category_id, base_price=base_price, z=z,
                   price_factor=price_factor, qty_intercept=qty_intercept,
                   cate_intercept=cate_intercept, cate_slope=cate_slope,
                   cat_starts=cat_starts, cat_counts=sizes)


def generate_customers(cfg: SimConfig, rng: np.random.Generator | None = None,
                       n: int | None = None) -> CustomerPopulation:
    """Draw the customer population from the configured priors."""
    cfg.validate()
    if rng is None:
        rng = stream(cfg.rng_seed, TAG_POPULATION)
    N = cfg.n_customers if n is None else n
    pri = cfg.customers

    beta_x = rng.uniform(pri.beta_x_low, pri.beta_x_high, N)
    beta_z = rng.normal(0.0, pri.beta_z_sigma, N)
    beta_w = -np.minimum(
        np.exp(rng.normal(pri.price_coef_logmean, pri.price_coef_logsigma, N)),
        pri.price_coef_cap)
    store_intercept = rng.gumbel(pri.store_intercept_loc, pri.store_intercept_scale, N)
    browse_carryover = rng.uniform(pri.browse_carryover_low, pri.browse_carryover_high, N)
    marketing_coef = rng.uniform(pri.marketing_coef_low, pri.marketing_coef_high, N)
    inertia = rng.uniform(pri.inertia_low, pri.inertia_high, N)
    qty_slope = rng.uniform(pri.qty_slope_low, pri.qty_slope_high, N)

    return CustomerPopulation(
        customer_id=np.arange(N, dtype=np.int64), beta_x=beta_x, beta_z=beta_z,
        beta_w=beta_w, store_intercept=store_intercept,
        browse_carryover=browse_carryover, marketing_coef=marketing_coef,
        inertia=inertia, qty_slope=qty_slope)


# --- shelf-pricing hidden-Markov process -----------------------------------

def _depth_from_uniform(u: np.ndarray, pricing: PricingConfig) -> np.ndarray:
    a = (pricing.depth_min - pricing.depth_mean) / pricing.depth_width
    b = (pricing.depth_max - pricing.depth_mean) / pricing.depth_width
    return truncnorm.ppf(u, a, b, loc=pricing.depth_mean, scale=pricing.depth_width)


def stationary_discount_prob(pricing: PricingConfig) -> float:
    leave_reg = 1.0 - pricing.stay_regular
    leave_disc = 1.0 - pricing.stay_discount
    total = leave_reg + leave_disc
    return leave_reg / total if total > 0 else 0.0


def init_pricing_state(catalog: Catalog, pricing: PricingConfig,
                       u_regime: np.ndarray, u_depth: np.ndarray) -> PricingState:
    """Initial regimes drawn from the chain's stationary distribution."""
    in_discount = u_regime < stationary_discount_prob(pricing)
    depth = np.where(in_discount, _depth_from_uniform(u_depth, pricing), 0.0)
    shelf = catalog.base_price * (1.0 - depth)
    return PricingState(in_discount=in_discount, depth=depth, shelf_price=shelf)


def advance_pricing_state(state: PricingState, catalog: Catalog, pricing: PricingConfig,
                          u_regime: np.ndarray, u_depth: np.ndarray) -> PricingState:
    """One transition of every product's regime chain.

    A fresh depth is drawn only on entry into the discount regime; products
    staying discounted keep their depth. The depth uniform is consumed for
    every product so stream positions do not depend on outcomes.
    """
    was = state.in_discount
    next_disc = np.where(was, u_regime < pricing.stay_discount,
                         u_regime >= pricing.stay_regular)
    entering = next_disc & ~was
    depth = np.where(next_disc, state.depth, 0.0)
    fresh = _depth_from_uniform(u_depth, pricing)
    depth = np.where(entering, fresh, depth)
    shelf = catalog.base_price * (1.0 - depth)
    return PricingState(in_discount=next_disc, depth=depth, shelf_price=shelf)


def step_shelf_prices(state: PricingState, catalog: Catalog, pricing: PricingConfig,
                      rng: np.random.Generator) -> PricingState:
    """Regime transition drawing its uniforms from ``rng``."""
    P = catalog.n_products
    u_regime = rng.random(P)
    u_depth = rng.random(P)
    return advance_pricing_state(state, catalog, pricing, u_regime, u_depth)


# --- serialization ----------------------------------------------------------

def save_world(path, cfg: SimConfig, catalog: Catalog,
               population: CustomerPopulation) -> None:
    """Write catalog + population with config provenance to one ``.npz``."""
    from .config import config_hash
    meta = {"format": CATALOG_FORMAT, "config": cfg.to_dict(),
            "config_hash": config_hash(cfg)}
    arrays = {f"catalog:{f}": getattr(catalog, f) for f in catalog.__dataclass_fields__}
    arrays |= {f"population:{f}": getattr(population, f)
               for f in population.__dataclass_fields__}
    np.savez(path, meta=np.asarray(json.dumps(meta)), **arrays)


def load_world(path) -> tuple[SimConfig, Catalog, CustomerPopulation]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != CATALOG_FORMAT:
            raise ValueError(f"unsupported world file format: {meta.get('format')}")
        catalog = Catalog(**{f: data[f"catalog:{f}"]
                             for f in Catalog.__dataclass_fields__})
        population = CustomerPopulation(**{f: data[f"population:{f}"]
                                           for f in CustomerPopulation.__dataclass_fields__})
    return SimConfig.from_dict(meta["config"]), catalog, population
