"""Episodic coupon-targeting environment.

Wraps the choice model with shelf-price dynamics, per-step marketing draws,
store-wide coupon actions and revenue rewards. World state is fully
snapshottable: restoring a snapshot and stepping reproduces the exact
continuation, because every random stream is keyed by (seed, tag, id) and
advanced to its recorded position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import seeds
from .catalog import (Catalog, CustomerPopulation, PricingState,
                      advance_pricing_state, init_pricing_state)
from .choice import BatchState, BatchStepResult, draws_per_step, simulate_batch_step
from .config import SimConfig, config_hash

SNAPSHOT_FORMAT = "shopsim-snapshot-v1"


class HorizonExceeded(RuntimeError):
    """Raised when stepping an environment past its configured horizon."""


@dataclass(frozen=True)
class Observation:
    """What agents may see. Rows of ``quantities`` follow the batch order;
    the price and marketing vectors are shared by all customers."""

    quantities: np.ndarray     # (B, P) int32, purchases of the previous step
    shelf_prices: np.ndarray   # (P,) > 0
    x_store: float
    x_product: np.ndarray      # (P,)


@dataclass(frozen=True)
class Action:
    """Per-customer indices into the coupon grid."""

    indices: np.ndarray

    def fractions(self, grid: np.ndarray) -> np.ndarray:
        return np.asarray(grid)[self.indices]


def effective_price(shelf_price, coupon: float, redeemed) -> np.ndarray:
    """Coupon-adjusted price: (1 - D * redeemed) * shelf."""
    shelf_price = np.asarray(shelf_price, dtype=np.float64)
    if np.any(shelf_price <= 0.0):
        raise ValueError("shelf price must be > 0")
    if not 0.0 <= coupon < 1.0:
        raise ValueError("coupon fraction must be in [0,1)")
    return (1.0 - coupon * np.asarray(redeemed)) * shelf_price


@dataclass
class EnvSnapshot:
    """Serializable world state at the start of step ``t``."""

    t: int
    horizon: int
    seed: int
    salt: int
    config_hash: str
    customer_id: np.ndarray
    in_discount: np.ndarray
    depth: np.ndarray
    prev_visited: np.ndarray
    prev_visit_prob: np.ndarray
    prev_store_score: np.ndarray
    qty_indptr: np.ndarray
    qty_product: np.ndarray
    qty_count: np.ndarray
    x_product: np.ndarray
    x_store: float

    def meta(self) -> dict:
        return {"format": SNAPSHOT_FORMAT, "t": self.t, "horizon": self.horizon,
                "seed": self.seed, "salt": self.salt, "config_hash": self.config_hash,
                "x_store": self.x_store}

    _ARRAY_FIELDS = ("customer_id", "in_discount", "depth", "prev_visited",
                     "prev_visit_prob", "prev_store_score", "qty_indptr",
                     "qty_product", "qty_count", "x_product")

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {f: getattr(self, f) for f in self._ARRAY_FIELDS}

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "EnvSnapshot":
        if meta.get("format") != SNAPSHOT_FORMAT:
            raise ValueError(f"unsupported snapshot format: {meta.get('format')}")
        return cls(t=int(meta["t"]), horizon=int(meta["horizon"]),
                   seed=int(meta["seed"]), salt=int(meta["salt"]),
                   config_hash=str(meta["config_hash"]), x_store=float(meta["x_store"]),
                   **{f: np.asarray(arrays[f]) for f in cls._ARRAY_FIELDS})

    def save(self, path) -> None:
        np.savez(path, meta=np.asarray(json.dumps(self.meta())), **self.to_arrays())

    @classmethod
    def load(cls, path) -> "EnvSnapshot":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != SNAPSHOT_FORMAT:
                raise ValueError(f"unsupported snapshot format: {meta.get('format')}")
            arrays = {f: data[f] for f in cls._ARRAY_FIELDS}
        return cls.from_arrays(meta, arrays)


class RetailEnv:
    """One batch of customers sharing a catalog and a pricing process."""

    def __init__(self, cfg: SimConfig, catalog: Catalog,
                 customers: CustomerPopulation, seed: int, horizon: int,
                 salt: int = 0):
        if catalog.n_products != cfg.n_products or catalog.n_categories != cfg.n_categories:
            raise ValueError("catalog dimensions do not match the config")
        if len(customers) < 1:
            raise ValueError("environment needs at least one customer")
        self.cfg = cfg
        self.catalog = catalog
        self.customers = customers
        self.seed = int(seed)
        self.salt = int(salt)
        self.horizon = int(horizon)
        self.grid = np.asarray(cfg.action_grid, dtype=np.float64)
        self._hash = config_hash(cfg)
        self._cust_block = draws_per_step(cfg.n_categories)
        self._env_block = 3 * cfg.n_products + 1

        self.state = BatchState.initial(len(customers))
        self.pricing: PricingState | None = None
        self.x_product: np.ndarray | None = None
        self.x_store: float = 0.0
        self._env_gen = None
        self._cust_gens = []

    # -- lifecycle -----------------------------------------------------------

    @property
    def n_customers(self) -> int:
        return len(self.customers)

    @property
    def t(self) -> int:
        return self.state.t

    def _make_streams(self, env_skip_blocks: int, cust_skip_blocks: int) -> None:
        self._env_gen = seeds.advanced_stream(
            env_skip_blocks * self._env_block, self.seed, seeds.TAG_ENV, self.salt)
        self._cust_gens = [
            seeds.advanced_stream(cust_skip_blocks * self._cust_block,
                                  self.seed, seeds.TAG_CUSTOMER, int(gid), self.salt)
            for gid in self.customers.customer_id]

    def _draw_context(self) -> None:
        P = self.cfg.n_products
        mk = self.cfg.marketing
        u_regime = self._env_gen.random(P)
        u_depth = self._env_gen.random(P)
        if self.pricing is None:
            self.pricing = init_pricing_state(self.catalog, self.cfg.pricing,
                                              u_regime, u_depth)
        else:
            self.pricing = advance_pricing_state(self.pricing, self.catalog,
                                                 self.cfg.pricing, u_regime, u_depth)
        self.x_product = mk.product_low + (mk.product_high - mk.product_low) \
            * self._env_gen.random(P)
        self.x_store = float(mk.store_low + (mk.store_high - mk.store_low)
                             * self._env_gen.random(1)[0])

    def observation(self) -> Observation:
        B, P = self.n_customers, self.cfg.n_products
        q = np.zeros((B, P), dtype=np.int32)
        for row, bought in enumerate(self.state.prev_qty_rows):
            for prod, cnt in bought.items():
                q[row, prod] = cnt
        return Observation(quantities=q, shelf_prices=self.pricing.shelf_price.copy(),
                           x_store=self.x_store, x_product=self.x_product.copy())

    def step(self, actions) -> tuple[Observation, np.ndarray, BatchStepResult]:
        """Apply one coupon action per customer and advance the world."""
        if self.t > self.horizon:
            raise HorizonExceeded(f"environment horizon {self.horizon} reached")
        if isinstance(actions, Action):
            actions = actions.indices
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.n_customers,):
            raise ValueError("need exactly one action per customer")
        if actions.min() < 0 or actions.max() >= self.grid.size:
            raise ValueError("action index outside the coupon grid")

        coupons = self.grid[actions]
        uniforms = np.empty((self.n_customers, self._cust_block))
        for row, gen in enumerate(self._cust_gens):
            uniforms[row] = gen.random(self._cust_block)

        result = simulate_batch_step(
            self.catalog, self.customers, self.state, self.pricing.shelf_price,
            coupons, self.x_product, self.x_store, uniforms,
            max_rate=self.cfg.max_quantity_rate)
        self._draw_context()
        return self.observation(), result.revenue.copy(), result

    # -- snapshot / restore ---------------------------------------------------

    def snapshot(self) -> EnvSnapshot:
        rows = self.state.prev_qty_rows
        counts = [len(r) for r in rows]
        indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        prod = np.empty(indptr[-1], dtype=np.int64)
        cnt = np.empty(indptr[-1], dtype=np.int64)
        pos = 0
        for r in rows:
            for p in sorted(r):
                prod[pos] = p
                cnt[pos] = r[p]
                pos += 1
        return EnvSnapshot(
            t=self.t, horizon=self.horizon, seed=self.seed, salt=self.salt,
            config_hash=self._hash, customer_id=self.customers.customer_id.copy(),
            in_discount=self.pricing.in_discount.copy(), depth=self.pricing.depth.copy(),
            prev_visited=self.state.prev_visited.copy(),
            prev_visit_prob=self.state.prev_visit_prob.copy(),
            prev_store_score=self.state.prev_store_score.copy(),
            qty_indptr=indptr, qty_product=prod, qty_count=cnt,
            x_product=self.x_product.copy(), x_store=self.x_store)


def reset(cfg: SimConfig, catalog: Catalog, customers: CustomerPopulation,
          seed: int, horizon: int | None = None,
          salt: int = 0) -> tuple[RetailEnv, Observation]:
    """Fresh environment at step 1: visit probabilities 1, no purchase history."""
    env = RetailEnv(cfg, catalog, customers, seed,
                    cfg.horizon if horizon is None else horizon, salt)
    env._make_streams(env_skip_blocks=0, cust_skip_blocks=0)
    env._draw_context()
    return env, env.observation()


def _subset_population(population: CustomerPopulation,
                       ids: np.ndarray) -> CustomerPopulation:
    pos = np.searchsorted(population.customer_id, ids)
    ok = (pos < len(population)) & (population.customer_id[np.minimum(pos, len(population) - 1)] == ids)
    if not np.all(ok):
        raise ValueError("snapshot refers to customers missing from the population")
    return CustomerPopulation(**{f: getattr(population, f)[pos]
                                 for f in CustomerPopulation.__dataclass_fields__})


def restore(snapshot: EnvSnapshot, cfg: SimConfig, catalog: Catalog,
            population: CustomerPopulation, horizon: int | None = None,
            salt: int | None = None) -> RetailEnv:
    """Rebuild a running environment from a snapshot.

    With default ``salt`` the continuation is exactly the one the snapshotted
    environment would have produced; passing a different salt re-keys all
    randomness from step ``t`` onward (used for independent evaluation
    episodes from one snapshot).
    """
    if snapshot.config_hash != config_hash(cfg):
        raise ValueError("snapshot was taken under a different configuration")
    customers = _subset_population(population, snapshot.customer_id)
    env = RetailEnv(cfg, catalog, customers, snapshot.seed,
                    snapshot.horizon if horizon is None else horizon,
                    snapshot.salt if salt is None else salt)
    env._make_streams(env_skip_blocks=snapshot.t, cust_skip_blocks=snapshot.t - 1)
    env.state = BatchState(
        t=snapshot.t, prev_visited=snapshot.prev_visited.copy(),
        prev_visit_prob=snapshot.prev_visit_prob.copy(),
        prev_store_score=snapshot.prev_store_score.copy(),
        prev_qty_rows=[
            {int(p): int(c) for p, c in zip(
                snapshot.qty_product[snapshot.qty_indptr[i]:snapshot.qty_indptr[i + 1]],
                snapshot.qty_count[snapshot.qty_indptr[i]:snapshot.qty_indptr[i + 1]])}
            for i in range(len(customers))])
    depth = snapshot.depth.copy()
    env.pricing = PricingState(in_discount=snapshot.in_discount.copy(), depth=depth,
                               shelf_price=catalog.base_price * (1.0 - depth))
    env.x_product = snapshot.x_product.copy()
    env.x_store = snapshot.x_store
    return env
