"""History summaries (incremental vs batch oracle) and the MI estimator."""

import numpy as np
import pytest

from shopsim.catalog import generate_catalog, generate_customers
from shopsim.config import SimConfig
from shopsim.env import reset
from shopsim.features import (FEATURE_NAMES, FeatureSchema, SummaryAccumulator,
                              mutual_information, rank_features)
from shopsim.seeds import stream


def world(seed=2, n_customers=25, n_products=30, n_categories=6, horizon=50):
    cfg = SimConfig(n_customers=n_customers, n_products=n_products,
                    n_categories=n_categories, horizon=horizon, rng_seed=seed)
    return cfg, generate_catalog(cfg), generate_customers(cfg)


def batch_recompute(cfg, catalog, history):
    """Oracle: recompute every feature from the raw step history.

    ``history`` is a list of (obs, action_fractions, result) per step plus the
    reset observation first.
    """
    obs0, steps = history[0], history[1:]
    n = obs0.quantities.shape[0]
    h = np.zeros((n, len(FEATURE_NAMES)))

    spend = np.zeros(n)
    qty = np.zeros(n)
    visits = np.zeros(n)
    last_visit = np.zeros(n)
    purchase_steps = np.zeros(n)
    disc_sum = np.zeros(n)
    cats = [set() for _ in range(n)]
    last_coupon = np.zeros(n)
    cur_obs = obs0

    for k, (obs, fracs, res) in enumerate(steps, start=1):
        for u in range(n):
            if res.visited[u]:
                visits[u] += 1
                last_visit[u] = k
        rows = res.cust_rows
        for i in range(rows.size):
            u = rows[i]
            spend[u] += res.unit_prices[i] * res.quantities[i]
            qty[u] += res.quantities[i]
            cats[u].add(int(res.categories[i]))
        bought = np.unique(rows)
        purchase_steps[bought] += 1
        disc_sum[bought] += res.redeemed_discount[bought]
        last_coupon = np.asarray(fracs, dtype=float)
        cur_obs = obs

    k = len(steps)
    for u in range(n):
        h[u, 0] = spend[u] / qty[u] if qty[u] else 0.0
        h[u, 1] = disc_sum[u] / purchase_steps[u] if purchase_steps[u] else 0.0
        h[u, 2] = k - last_visit[u]
        h[u, 3] = visits[u] / k if k else 0.0
        h[u, 4] = spend[u] / visits[u] if visits[u] else 0.0
        h[u, 5] = len(cats[u])
        h[u, 6] = last_coupon[u]
        h[u, 7] = np.mean(cur_obs.shelf_prices / catalog.base_price)
        h[u, 8] = cur_obs.x_store
        h[u, 9] = qty[u]
    return h


class TestSummaryAccumulator:
    def test_empty_history_conventions(self):
        cfg, cat, pop = world()
        env, obs0 = reset(cfg, cat, pop, seed=4)
        acc = SummaryAccumulator(len(pop), cfg.n_categories, cat.base_price)
        acc.observe_reset(obs0)
        h = acc.vector()
        names = list(FEATURE_NAMES)
        assert np.all(h[:, names.index("avg_purchase_price")] == 0.0)
        assert np.all(h[:, names.index("visit_frequency")] == 0.0)
        assert np.all(h[:, names.index("distinct_categories")] == 0.0)
        assert np.all(h[:, names.index("steps_since_last_visit")] == 0.0)
        assert np.all(np.isfinite(h))

    def test_no_purchase_trajectory(self):
        cfg, cat, pop = world(n_customers=5)
        env, obs0 = reset(cfg, cat, pop, seed=4)
        acc = SummaryAccumulator(5, cfg.n_categories, cat.base_price)
        acc.observe_reset(obs0)
        grid = np.asarray(cfg.action_grid)
        for _ in range(5):
            a = np.zeros(5, dtype=int)
            obs, _, res = env.step(a)
            acc.update(obs, grid[a], res)
        h = acc.vector()
        idx = list(FEATURE_NAMES).index("visit_frequency")
        assert np.all((h[:, idx] >= 0) & (h[:, idx] <= 1))
        never_bought = acc.total_qty == 0
        assert np.all(h[never_bought, 0] == 0.0)

    def test_single_purchase_books_correctly(self):
        cfg = SimConfig(n_customers=1, n_products=1, n_categories=1, horizon=3,
                        rng_seed=3)
        cat = generate_catalog(cfg)
        pop = generate_customers(cfg)
        cat.cate_intercept[0] = 60.0  # force the purchase at t=1 (visit prob 1)
        env, obs0 = reset(cfg, cat, pop, seed=4)
        acc = SummaryAccumulator(1, 1, cat.base_price)
        acc.observe_reset(obs0)
        obs, r, res = env.step(np.zeros(1, dtype=int))
        acc.update(obs, np.zeros(1), res)
        h = acc.vector()[0]
        q = res.quantities[0]
        price = res.unit_prices[0]
        assert h[list(FEATURE_NAMES).index("avg_purchase_price")] == pytest.approx(price)
        assert h[list(FEATURE_NAMES).index("total_quantity")] == q
        assert h[list(FEATURE_NAMES).index("distinct_categories")] == 1

    def test_incremental_equals_batch_oracle(self):
        cfg, cat, pop = world(horizon=50)
        env, obs0 = reset(cfg, cat, pop, seed=4)
        acc = SummaryAccumulator(len(pop), cfg.n_categories, cat.base_price)
        acc.observe_reset(obs0)
        grid = np.asarray(cfg.action_grid)
        rng = np.random.default_rng(0)
        history = [obs0]
        for _ in range(50):
            a = rng.integers(len(grid), size=len(pop))
            obs, _, res = env.step(a)
            acc.update(obs, grid[a], res)
            history.append((obs, grid[a], res))
        oracle = batch_recompute(cfg, cat, history)
        assert np.max(np.abs(acc.vector() - oracle)) <= 1e-10

    def test_no_lookahead(self):
        # H_t built after t steps must not change however the run continues
        cfg, cat, pop = world(n_customers=10, horizon=20)
        grid = np.asarray(cfg.action_grid)

        def run(n_steps, seed_tail):
            env, obs0 = reset(cfg, cat, pop, seed=4)
            acc = SummaryAccumulator(10, cfg.n_categories, cat.base_price)
            acc.observe_reset(obs0)
            rng = np.random.default_rng(1)
            h_at_8 = None
            for t in range(n_steps):
                a = rng.integers(len(grid), size=10) if t < 8 else \
                    np.random.default_rng(seed_tail + t).integers(len(grid), size=10)
                obs, _, res = env.step(a)
                acc.update(obs, grid[a], res)
                if t == 7:
                    h_at_8 = acc.vector().copy()
            return h_at_8

        assert np.array_equal(run(8, 100), run(20, 999))

    def test_round_trip_arrays(self):
        cfg, cat, pop = world(n_customers=7)
        env, obs0 = reset(cfg, cat, pop, seed=4)
        acc = SummaryAccumulator(7, cfg.n_categories, cat.base_price)
        acc.observe_reset(obs0)
        grid = np.asarray(cfg.action_grid)
        for _ in range(4):
            a = np.full(7, 2)
            obs, _, res = env.step(a)
            acc.update(obs, grid[a], res)
        clone = SummaryAccumulator.from_arrays(acc.to_arrays())
        assert np.array_equal(clone.vector(), acc.vector())


class TestFeatureSchema:
    def test_transform_and_hash(self):
        rng = stream(5)
        samples = rng.normal(3.0, 2.0, size=(1000, len(FEATURE_NAMES)))
        schema = FeatureSchema.from_samples(samples)
        z = schema.transform(samples)
        assert np.allclose(z.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(z.std(axis=0), 1.0, atol=1e-12)
        assert schema.hash() == FeatureSchema.from_samples(samples).hash()

    def test_constant_feature_unit_std(self):
        samples = np.ones((50, len(FEATURE_NAMES)))
        schema = FeatureSchema.from_samples(samples)
        assert np.all(schema.std == 1.0)
        assert np.all(np.isfinite(schema.transform(samples)))


class TestMutualInformation:
    def test_independent_uniforms_near_zero(self):
        rng = stream(6)
        x, y = rng.random(5000), rng.random(5000)
        assert mutual_information(x, y) < 0.05

    def test_identity_strongly_dependent(self):
        x = stream(7).random(5000)
        assert mutual_information(x, x.copy()) > 2.0

    def test_gaussian_closed_form(self):
        rho = 0.8
        rng = stream(8)
        z = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=10_000)
        mi = mutual_information(z[:, 0], z[:, 1])
        assert abs(mi - (-0.5 * np.log(1 - rho ** 2))) < 0.1

    def test_symmetry(self):
        rng = stream(9)
        x = rng.normal(size=5000)
        y = 0.6 * x + 0.8 * rng.normal(size=5000)
        assert abs(mutual_information(x, y) - mutual_information(y, x)) < 0.02

    def test_constant_input_zero(self):
        assert mutual_information(np.ones(100), stream(10).random(100)) == 0.0

    def test_nonnegative_clipping(self):
        rng = stream(11)
        for trial in range(5):
            assert mutual_information(rng.random(200), rng.random(200)) >= 0.0

    def test_monotone_rescaling_invariance(self):
        rng = stream(12)
        x = rng.random(4000)
        y = 0.5 * x + 0.5 * rng.random(4000)
        base = mutual_information(x, y)
        scaled = mutual_information(np.exp(3 * x), y * 10 - 4)
        assert abs(base - scaled) < 0.05

    def test_sample_count_guard(self):
        with pytest.raises(ValueError):
            mutual_information(np.arange(4.0), np.arange(4.0), k=3)


class TestRankFeatures:
    def test_planted_feature_ranked_first(self):
        rng = stream(13)
        n = 4000
        feats = rng.random((n, len(FEATURE_NAMES)))
        reward = 2.0 * feats[:, 3] + 0.05 * rng.normal(size=n)
        ranking = rank_features(feats, reward)
        assert ranking[0][0] == FEATURE_NAMES[3]

    def test_constant_feature_last_with_zero(self):
        rng = stream(14)
        n = 2000
        feats = rng.random((n, len(FEATURE_NAMES)))
        feats[:, 5] = 1.23
        reward = feats[:, 0] + 0.1 * rng.normal(size=n)
        ranking = rank_features(feats, reward)
        assert ranking[-1][1] == 0.0
        zero_names = {name for name, score in ranking if score == 0.0}
        assert FEATURE_NAMES[5] in zero_names

    def test_permutation_invariant(self):
        rng = stream(15)
        n = 1500
        feats = rng.random((n, len(FEATURE_NAMES)))
        reward = feats[:, 1] + 0.2 * rng.normal(size=n)
        perm = rng.permutation(n)
        assert rank_features(feats, reward) == rank_features(feats[perm], reward[perm])

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            rank_features(np.empty((0, len(FEATURE_NAMES))), np.empty(0))
