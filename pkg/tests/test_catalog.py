"""Catalog, population and shelf-pricing process tests."""

import numpy as np
import pytest

from shopsim.catalog import (advance_pricing_state, category_sizes, generate_catalog,
                             generate_customers, init_pricing_state, load_world,
                             save_world, stationary_discount_prob, step_shelf_prices)
from shopsim.config import ConfigError, PricingConfig, SimConfig
from shopsim.seeds import stream


def small_cfg(**kw):
    base = dict(n_customers=100, n_products=50, n_categories=10, horizon=10, rng_seed=5)
    base.update(kw)
    return SimConfig(**base)


class TestGenerateCatalog:
    def test_category_sizes_2514_over_100(self):
        cfg = SimConfig(n_products=2514, n_categories=100, n_customers=10,
                        horizon=5, rng_seed=7)
        cat = generate_catalog(cfg)
        assert cat.n_products == 2514
        sizes = np.bincount(cat.category_id, minlength=100)
        assert set(sizes.tolist()) == {25, 26}
        assert sizes.sum() == 2514

    def test_same_seed_bitwise_identical(self):
        cfg = small_cfg()
        a, b = generate_catalog(cfg), generate_catalog(cfg)
        for f in ("base_price", "z", "price_factor", "qty_intercept",
                  "cate_intercept", "cate_slope"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_singleton_catalog(self):
        cfg = small_cfg(n_products=1, n_categories=1)
        cat = generate_catalog(cfg)
        assert cat.n_products == 1 and cat.n_categories == 1
        assert cat.base_price[0] > 0

    def test_rejects_more_categories_than_products(self):
        with pytest.raises(ConfigError):
            small_cfg(n_products=3, n_categories=5)

    def test_every_category_nonempty_and_contiguous(self):
        cfg = small_cfg(n_products=47, n_categories=9)
        cat = generate_catalog(cfg)
        assert np.all(cat.cat_counts >= 1)
        assert np.all(np.diff(cat.category_id) >= 0)  # sorted by category
        assert np.array_equal(np.bincount(cat.category_id), cat.cat_counts)

    def test_base_prices_positive(self):
        cat = generate_catalog(small_cfg())
        assert np.all(cat.base_price > 0)


class TestGenerateCustomers:
    def test_marketing_coef_bounds(self):
        cfg = small_cfg(n_customers=10_000)
        pop = generate_customers(cfg)
        assert pop.marketing_coef.min() >= 0.004
        assert pop.marketing_coef.max() <= 0.006

    def test_store_intercept_gumbel_mean(self):
        # Closed-form Gumbel(-2, 0.1) mean, cross-checked with a Monte Carlo
        # oracle drawn straight from numpy's Gumbel sampler.
        cfg = small_cfg(n_customers=10_000)
        pop = generate_customers(cfg)
        expected = -2.0 + 0.1 * np.euler_gamma
        se = 0.1 * np.pi / np.sqrt(6) / np.sqrt(10_000)
        assert abs(pop.store_intercept.mean() - expected) < 3 * se

        oracle = stream(123).gumbel(-2.0, 0.1, 200_000).mean()
        assert abs(oracle - expected) < 3 * 0.1 * np.pi / np.sqrt(6) / np.sqrt(200_000)

    def test_inertia_in_unit_interval(self):
        pop = generate_customers(small_cfg(n_customers=5000))
        assert np.all((pop.inertia >= 0.0) & (pop.inertia <= 1.0))

    def test_price_coef_nonpositive(self):
        pop = generate_customers(small_cfg(n_customers=5000))
        assert np.all(pop.beta_w <= 0.0)

    def test_determinism_and_slicing(self):
        cfg = small_cfg()
        a, b = generate_customers(cfg), generate_customers(cfg)
        assert np.array_equal(a.beta_w, b.beta_w)
        sl = a.slice(10, 20)
        assert np.array_equal(sl.customer_id, np.arange(10, 20))
        assert np.array_equal(sl.beta_x, a.beta_x[10:20])


class TestShelfPricing:
    def test_absorbing_to_regular(self):
        # stay_discount = 0: every discounted product leaves next step
        cfg = small_cfg(pricing=PricingConfig(stay_regular=0.5, stay_discount=0.0))
        cat = generate_catalog(cfg)
        rng = stream(3)
        state = init_pricing_state(cat, cfg.pricing, rng.random(50), rng.random(50))
        state.in_discount[:] = True
        nxt = step_shelf_prices(state, cat, cfg.pricing, rng)
        assert not nxt.in_discount.any()
        assert np.array_equal(nxt.shelf_price, cat.base_price)

    def test_regular_absorbing_keeps_price_constant(self):
        cfg = small_cfg(pricing=PricingConfig(stay_regular=1.0, stay_discount=0.3))
        cat = generate_catalog(cfg)
        rng = stream(4)
        state = init_pricing_state(cat, cfg.pricing, np.ones(50), rng.random(50))
        assert not state.in_discount.any()
        for _ in range(20):
            state = step_shelf_prices(state, cat, cfg.pricing, rng)
            assert np.array_equal(state.shelf_price, cat.base_price)

    def test_stationary_regime_frequency(self):
        cfg = small_cfg(n_products=200, n_categories=10)
        cat = generate_catalog(cfg)
        rng = stream(11)
        state = init_pricing_state(cat, cfg.pricing, rng.random(200), rng.random(200))
        hits = 0
        steps = 500  # 200 products x 500 steps = 1e5 product-steps
        for _ in range(steps):
            state = step_shelf_prices(state, cat, cfg.pricing, rng)
            hits += state.in_discount.sum()
        freq = hits / (200 * steps)
        assert abs(freq - stationary_discount_prob(cfg.pricing)) < 0.01

    def test_longrun_mean_depth_near_configured(self):
        cfg = small_cfg(n_products=200, n_categories=10)
        cat = generate_catalog(cfg)
        rng = stream(12)
        state = init_pricing_state(cat, cfg.pricing, rng.random(200), rng.random(200))
        total = 0.0
        count = 0
        for _ in range(500):
            state = step_shelf_prices(state, cat, cfg.pricing, rng)
            total += state.depth[state.in_discount].sum()
            count += state.in_discount.sum()
        assert abs(total / count - cfg.pricing.depth_mean) < 0.02

    def test_shelf_price_bounds(self):
        cfg = small_cfg()
        cat = generate_catalog(cfg)
        rng = stream(13)
        state = init_pricing_state(cat, cfg.pricing, rng.random(50), rng.random(50))
        for _ in range(50):
            state = step_shelf_prices(state, cat, cfg.pricing, rng)
            assert np.all(state.shelf_price > 0)
            assert np.all(state.shelf_price <= cat.base_price + 1e-12)
            assert np.all((state.depth >= 0) & (state.depth < 1))
            # invariant: regular products sit exactly at base price
            assert np.array_equal(state.shelf_price[~state.in_discount],
                                  cat.base_price[~state.in_discount])

    def test_depth_redrawn_only_on_entry(self):
        cfg = small_cfg(pricing=PricingConfig(stay_regular=0.0, stay_discount=1.0))
        cat = generate_catalog(cfg)
        rng = stream(14)
        state = init_pricing_state(cat, cfg.pricing, np.ones(50), rng.random(50))
        first = step_shelf_prices(state, cat, cfg.pricing, rng)  # all enter discount
        assert first.in_discount.all()
        second = step_shelf_prices(first, cat, cfg.pricing, rng)  # all stay
        assert np.array_equal(first.depth, second.depth)


class TestWorldSerialization:
    def test_round_trip_exact(self, tmp_path):
        cfg = small_cfg()
        cat = generate_catalog(cfg)
        pop = generate_customers(cfg)
        path = tmp_path / "world.npz"
        save_world(path, cfg, cat, pop)
        cfg2, cat2, pop2 = load_world(path)
        assert cfg2 == cfg
        for f in cat.__dataclass_fields__:
            assert np.array_equal(getattr(cat, f), getattr(cat2, f))
        for f in pop.__dataclass_fields__:
            assert np.array_equal(getattr(pop, f), getattr(pop2, f))

    def test_bad_format_rejected(self, tmp_path):
        path = tmp_path / "bogus.npz"
        np.savez(path, meta=np.asarray('{"format": "other"}'))
        with pytest.raises(ValueError, match="format"):
            load_world(path)


def test_category_sizes_remainder_spread():
    assert category_sizes(7, 3).tolist() == [3, 2, 2]
    assert category_sizes(9, 3).tolist() == [3, 3, 3]
    assert category_sizes(1, 1).tolist() == [1]
