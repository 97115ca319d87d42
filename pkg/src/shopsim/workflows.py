"""End-to-end workflows: offline collection, training and evaluation with
environment resumption, hyperparameter search, static-policy sweeps and the
segment analyses.

Master-seed discipline: the world (catalog + population) derives from
``cfg.rng_seed``; batch environments, agent instances, evaluation episodes
and tuning trials all use streams split from the same master seed, so the
whole pipeline is reproducible from (config, seed). Parallel execution maps
independent jobs and is exactly equal to the serial run.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import env as env_mod
from . import seeds
from .agents import (HYPERPARAM_SPACE, Policy, PolicySpec, TransitionBatch,
                     build_policy)
from .catalog import Catalog, CustomerPopulation, generate_catalog, generate_customers
from .config import SimConfig
from .dataset import OfflineDataset
from .features import FeatureSchema, SummaryAccumulator
from .metrics import EvalRun, MetricsReport, compute_metrics, episode_metrics

logger = logging.getLogger(__name__)

TAG_TRAIN = 0x0B

_EPOCH_PATIENCE = 15          # early-stopping tolerance (epochs without improvement)
_DEFAULT_NEURAL_EPOCHS = 1000
_MINIBATCH = 256


def _pool_map(fn: Callable, tasks: list, jobs: int):
    """Order-preserving map, optionally across processes."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = mp.get_context("fork")
    with ctx.Pool(min(jobs, len(tasks))) as pool:
        return pool.map(fn, tasks)


# --- offline collection (random behaviour policy) ----------------------------

def _collect_batch(task) -> tuple:
    cfg, catalog, customers, batch_seed, horizon = task
    B = len(customers)
    T = horizon
    grid = np.asarray(cfg.action_grid)
    n_arms = grid.size

    environ, obs = env_mod.reset(cfg, catalog, customers, seed=batch_seed, horizon=T)
    acc = SummaryAccumulator(B, cfg.n_categories, catalog.base_price)
    acc.observe_reset(obs)

    d = acc.vector().shape[1]
    features = np.empty((B, T + 1, d))
    actions = np.empty((B, T), dtype=np.int16)
    rewards = np.empty((B, T))
    features[:, 0] = acc.vector()

    act_rng = seeds.stream(batch_seed, seeds.TAG_POLICY)
    for t in range(T):
        a = act_rng.integers(n_arms, size=B)
        obs, r, result = environ.step(a)
        acc.update(obs, grid[a], result)
        features[:, t + 1] = acc.vector()
        actions[:, t] = a
        rewards[:, t] = r
    return features, actions, rewards, environ.snapshot(), acc


def collect_offline(cfg: SimConfig, batch_size: int, n_batches: int,
                    horizon: int | None = None, jobs: int = 1) -> OfflineDataset:
    """Collect ``n_batches`` independent batch trajectories under the uniform
    random policy and pair each with its end-of-episode snapshot."""
    cfg.validate()
    T = cfg.horizon if horizon is None else int(horizon)
    if batch_size * n_batches > cfg.n_customers:
        raise ValueError("batch_size * n_batches exceeds the configured population")
    master = cfg.rng_seed

    catalog = generate_catalog(cfg)
    population = generate_customers(cfg)
    tasks = []
    for n in range(n_batches):
        sl = population.slice(n * batch_size, (n + 1) * batch_size)
        tasks.append((cfg, catalog, sl, seeds.mix_key(master, seeds.TAG_BATCH, n), T))

    results = _pool_map(_collect_batch, tasks, jobs)
    features = np.stack([r[0] for r in results])
    actions = np.stack([r[1] for r in results])
    rewards = np.stack([r[2] for r in results])
    schema = FeatureSchema.from_samples(features[:, :, :T, :])
    return OfflineDataset(config=cfg, seed=master, features=features,
                          actions=actions, rewards=rewards,
                          snapshots=[r[3] for r in results],
                          summaries=[r[4] for r in results], schema=schema)


# --- training -----------------------------------------------------------------

def default_n_train(kind: str, dataset: OfflineDataset) -> int:
    if kind in ("lin-ts", "lin-ucb"):
        return dataset.n_batches
    if kind in ("neural-boltzmann", "dqn"):
        return _DEFAULT_NEURAL_EPOCHS
    return 0


def train_policy(spec: PolicySpec, dataset: OfflineDataset, agent_seed: int,
                 n_train: int | None = None) -> Policy:
    """Train one policy instance per the offline protocol.

    Each epoch samples one batch trajectory with replacement. Linear bandits
    apply one forgetting-factor update per epoch; neural policies run
    mini-batch SGD over the shuffled tuples with plateau early stopping.
    """
    policy = build_policy(spec, dataset.config.action_grid, dataset.schema,
                          seed=agent_seed)
    epochs = default_n_train(spec.kind, dataset) if n_train is None else int(n_train)
    if epochs <= 0 or spec.kind in ("static", "random"):
        return policy

    sampler = seeds.stream(agent_seed, TAG_TRAIN)
    best = np.inf
    stale = 0
    for _ in range(epochs):
        n = int(sampler.integers(dataset.n_batches))
        feats, acts, rews, nxt, term = dataset.batch_tuples(n)
        if spec.kind in ("lin-ts", "lin-ucb"):
            policy.update(TransitionBatch(feats, acts, rews))
            continue
        order = sampler.permutation(len(rews))
        for lo in range(0, len(order), _MINIBATCH):
            sel = order[lo:lo + _MINIBATCH]
            policy.update(TransitionBatch(feats[sel], acts[sel], rews[sel],
                                          nxt[sel], term[sel]))
        loss = policy.epoch_loss(TransitionBatch(feats, acts, rews, nxt, term))
        if loss < best - 1e-12:
            best = loss
            stale = 0
        else:
            stale += 1
            if stale >= _EPOCH_PATIENCE:
                break
    return policy


# --- evaluation with environment resumption -----------------------------------

def evaluate_policy(policy: Policy, dataset: OfflineDataset, catalog: Catalog,
                    population: CustomerPopulation, n_eval: int, t_eval: int,
                    agent_seed: int = 0) -> EvalRun:
    """Run ``n_eval`` episodes of ``t_eval`` steps from every stored snapshot.

    Episode ``e`` re-keys the environment randomness with salt ``e`` (salt 0
    is the exact continuation of the collection run). Common salts across
    policies give paired comparisons.
    """
    policy.check_schema(dataset.schema.hash())
    cfg = dataset.config
    grid = np.asarray(cfg.action_grid)
    N = dataset.n_customers
    n_arms = grid.size

    ep_metrics = np.empty((n_eval, 5))
    revenue_eps = np.zeros((n_eval, N))
    coupon_counts = np.zeros((N, n_arms), dtype=np.int64)

    for e in range(n_eval):
        revenue = np.zeros(N)
        quantity = np.zeros(N)
        visits = np.zeros(N)
        coupon_sum = np.zeros(N)
        purchase_steps = np.zeros(N)
        distinct = np.zeros(N)
        offset = 0
        for snap, summary in zip(dataset.snapshots, dataset.summaries):
            B = len(snap.customer_id)
            environ = env_mod.restore(snap, cfg, catalog, population,
                                      horizon=snap.t - 1 + t_eval, salt=e)
            assert environ.t == dataset.horizon + 1, "evaluation must resume at T+1"
            acc = summary.copy()
            window_cats = np.zeros((B, cfg.n_categories), dtype=bool)
            rows = np.arange(offset, offset + B)
            for _ in range(t_eval):
                a = policy.act(acc.vector())
                obs, r, result = environ.step(a)
                acc.update(obs, grid[a], result)
                revenue[rows] += r
                visits[rows] += result.visited
                np.add.at(quantity, offset + result.cust_rows, result.quantities)
                window_cats[result.cust_rows, result.categories] = True
                bought = np.zeros(B, dtype=bool)
                bought[result.cust_rows] = True
                purchase_steps[rows] += bought
                coupon_sum[rows] += np.where(bought, result.redeemed_discount, 0.0)
                np.add.at(coupon_counts, (rows, a), 1)
            distinct[rows] = window_cats.sum(axis=1)
            offset += B
        ep_metrics[e] = episode_metrics(revenue, quantity, visits, distinct,
                                        coupon_sum, purchase_steps)
        revenue_eps[e] = revenue

    customer_id = np.concatenate([s.customer_id for s in dataset.snapshots])
    mean_coupon = coupon_counts @ grid / np.maximum(coupon_counts.sum(axis=1), 1)
    return EvalRun(kind=policy.kind, agent_seed=agent_seed,
                   episode_metrics=ep_metrics, customer_id=customer_id,
                   customer_revenue=revenue_eps.mean(axis=0),
                   customer_mean_coupon=mean_coupon,
                   action_counts=coupon_counts,
                   hyperparams=dict(policy.hyperparams))


def _train_eval_one(task) -> EvalRun:
    (spec, dataset, catalog, population, n_train, n_eval, t_eval, agent_seed) = task
    policy = train_policy(spec, dataset, agent_seed, n_train)
    return evaluate_policy(policy, dataset, catalog, population, n_eval, t_eval,
                           agent_seed=agent_seed)


def train_and_eval(spec: PolicySpec, dataset: OfflineDataset,
                   n_agent: int = 10, n_eval: int = 10, t_eval: int = 20,
                   n_train: int | None = None, jobs: int = 1,
                   catalog: Catalog | None = None,
                   population: CustomerPopulation | None = None) -> list[EvalRun]:
    """Train ``n_agent`` independent instances and evaluate each one."""
    cfg = dataset.config
    if catalog is None:
        catalog = generate_catalog(cfg)
    if population is None:
        population = generate_customers(cfg)
    tasks = []
    for k in range(n_agent):
        agent_seed = seeds.mix_key(dataset.seed, seeds.TAG_POLICY, k)
        tasks.append((spec, dataset, catalog, population, n_train, n_eval,
                      t_eval, agent_seed))
    return _pool_map(_train_eval_one, tasks, jobs)


# --- hyperparameter search ------------------------------------------------------

def uniform_sampler(space: dict[str, Any], rng: np.random.Generator) -> dict[str, Any]:
    """Uniform draw per parameter: float on intervals, choice on lists."""
    out: dict[str, Any] = {}
    for name, spec in space.items():
        if isinstance(spec, tuple) and len(spec) == 2:
            out[name] = float(rng.uniform(*spec))
        elif isinstance(spec, list):
            out[name] = spec[int(rng.integers(len(spec)))]
        else:
            raise ValueError(f"malformed search space entry {name!r}")
    return out


@dataclass
class TuneResult:
    kind: str
    best_params: dict[str, Any]
    best_objective: float
    best_trial: int
    trials: list[dict] = field(default_factory=list)


def tune(kind: str, dataset: OfflineDataset, n_tune: int = 20, n_agent: int = 3,
         n_eval: int = 10, t_eval: int = 20, n_train: int | None = None,
         jobs: int = 1, space: dict[str, Any] | None = None,
         sampler: Callable = uniform_sampler) -> TuneResult:
    """Random-search tuning: ``n_tune`` sampled configurations, each scored by
    mean accumulated revenue over ``n_agent`` train/eval runs. Ties keep the
    earliest trial."""
    if space is None:
        space = HYPERPARAM_SPACE.get(kind)
    if not space:
        raise ValueError(f"no search space for policy kind {kind!r}")
    cfg = dataset.config
    catalog = generate_catalog(cfg)
    population = generate_customers(cfg)
    rng = seeds.stream(dataset.seed, seeds.TAG_TUNE)

    trials = []
    best_idx = -1
    best_obj = -np.inf
    for i in range(n_tune):
        params = sampler(space, rng)
        runs = train_and_eval(PolicySpec(kind, params), dataset, n_agent=n_agent,
                              n_eval=n_eval, t_eval=t_eval, n_train=n_train,
                              jobs=jobs, catalog=catalog, population=population)
        objective = float(np.mean([r.metric_means()[0] for r in runs]))
        trials.append({"trial": i, "params": params, "objective": objective})
        logger.info("tune %s trial %d: objective %.4f", kind, i, objective)
        if objective > best_obj:
            best_obj = objective
            best_idx = i
    return TuneResult(kind=kind, best_params=trials[best_idx]["params"],
                      best_objective=best_obj, best_trial=best_idx, trials=trials)


# --- training-size sensitivity ---------------------------------------------------

def sensitivity_sweep(spec: PolicySpec, dataset: OfflineDataset, sizes: list[int],
                      random_runs: list[EvalRun], n_agent: int = 10,
                      n_eval: int = 10, t_eval: int = 20,
                      n_train: int | None = None,
                      jobs: int = 1) -> dict[int, MetricsReport]:
    """Re-train on customer subsamples of the dataset; evaluate on the full
    environment set. Sizes must be multiples of the batch size."""
    cfg = dataset.config
    catalog = generate_catalog(cfg)
    population = generate_customers(cfg)
    out: dict[int, MetricsReport] = {}
    for size in sizes:
        if size > dataset.n_customers:
            raise ValueError(f"requested {size} customers, dataset has {dataset.n_customers}")
        if size % dataset.batch_size:
            raise ValueError("sizes must be multiples of the collection batch size")
        if size == dataset.n_customers:
            subset = dataset
        else:
            rng = seeds.stream(dataset.seed, seeds.TAG_SUBSAMPLE, size)
            idx = np.sort(rng.choice(dataset.n_batches, size // dataset.batch_size,
                                     replace=False))
            subset = dataset.subset(idx)
            subset = _with_full_eval(subset, dataset)
        runs = train_and_eval(spec, subset, n_agent=n_agent, n_eval=n_eval,
                              t_eval=t_eval, n_train=n_train, jobs=jobs,
                              catalog=catalog, population=population)
        out[size] = compute_metrics(runs, random_runs)
    return out


def _with_full_eval(subset: OfflineDataset, full: OfflineDataset) -> OfflineDataset:
    """Train-on-subset dataset that still evaluates over every batch."""
    return OfflineDataset(config=subset.config, seed=subset.seed,
                          features=subset.features, actions=subset.actions,
                          rewards=subset.rewards, snapshots=full.snapshots,
                          summaries=full.summaries, schema=subset.schema)


# --- static benchmark sweep -------------------------------------------------------

def _sweep_sim(task):
    cfg, levels, window, sim_seed = task
    sim_cfg = cfg.replace(rng_seed=sim_seed, action_grid=tuple(levels))
    catalog = generate_catalog(sim_cfg)
    population = generate_customers(sim_cfg)
    T = sim_cfg.horizon
    start = T - window
    revenue_rows = []
    retention_rows = []
    for idx, _level in enumerate(levels):
        environ, _obs = env_mod.reset(sim_cfg, catalog, population, seed=sim_seed)
        actions = np.full(len(population), idx, dtype=np.int64)
        revenue = np.zeros(len(population))
        visits = np.zeros(len(population))
        for t in range(T):
            _obs, r, result = environ.step(actions)
            if t >= start:
                revenue += r
                visits += result.visited
        revenue_rows.append(revenue.mean())
        retention_rows.append(np.mean(visits > 0))
    return revenue_rows, retention_rows


@dataclass
class SweepResult:
    levels: list[float]
    revenue: np.ndarray    # (n_sims, n_levels) per-sim mean revenue per customer
    retention: np.ndarray  # (n_sims, n_levels)

    def rows(self) -> list[dict]:
        n = self.revenue.shape[0]
        out = []
        for i, level in enumerate(self.levels):
            out.append({
                "level": level,
                "revenue_mean": float(self.revenue[:, i].mean()),
                "revenue_se": float(self.revenue[:, i].std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
                "retention_mean": float(self.retention[:, i].mean()),
                "retention_se": float(self.retention[:, i].std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
            })
        return out


def static_sweep(cfg: SimConfig, levels: list[float], n_sims: int = 100,
                 n_customers: int = 100, horizon: int = 70, window: int = 20,
                 jobs: int = 1) -> SweepResult:
    """Benchmark fixed coupon levels over independent simulated worlds.

    Each simulation draws a fresh world; all levels share it (paired
    comparisons). Metrics cover the final ``window`` steps.
    """
    for level in levels:
        if not 0.0 <= level < 1.0:
            raise ValueError(f"coupon level {level} outside [0,1)")
    if not 1 <= window <= horizon:
        raise ValueError("window must lie in [1, horizon]")
    base = cfg.replace(n_customers=n_customers, horizon=horizon)
    tasks = [(base, list(levels), window, seeds.mix_key(cfg.rng_seed, seeds.TAG_SIM, s))
             for s in range(n_sims)]
    results = _pool_map(_sweep_sim, tasks, jobs)
    return SweepResult(levels=list(levels),
                       revenue=np.asarray([r[0] for r in results]),
                       retention=np.asarray([r[1] for r in results]))


# --- segment analysis ---------------------------------------------------------------

@dataclass
class SegmentReport:
    median_coef: float
    degenerate: bool
    n_sensitive: int
    n_insensitive: int
    per_policy: dict[str, dict]
    offline_mean_reward: dict[str, list[float]]  # segment -> mean reward per offer
    grid: list[float]

    def to_dict(self) -> dict:
        return {"median_coef": self.median_coef, "degenerate": self.degenerate,
                "n_sensitive": self.n_sensitive, "n_insensitive": self.n_insensitive,
                "per_policy": self.per_policy,
                "offline_mean_reward": self.offline_mean_reward, "grid": self.grid}


def price_sensitivity_coef(catalog: Catalog, population: CustomerPopulation) -> np.ndarray:
    """Mean price coefficient per customer across the catalog."""
    return population.beta_w * float(catalog.price_factor.mean())


def segment_analysis(catalog: Catalog, population: CustomerPopulation,
                     eval_runs: dict[str, list[EvalRun]],
                     dataset: OfflineDataset) -> SegmentReport:
    """Median split on price sensitivity plus per-segment policy behaviour.

    Customers at or below the median coefficient (more negative = more
    price-sensitive) form the sensitive segment.
    """
    coef = price_sensitivity_coef(catalog, population)
    median = float(np.median(coef))
    degenerate = bool(np.all(coef == coef[0]))
    sensitive_mask = coef <= median

    grid = np.asarray(dataset.config.action_grid)
    per_policy: dict[str, dict] = {}
    for kind, runs in eval_runs.items():
        rev = np.mean([r.customer_revenue for r in runs], axis=0)
        coupon = np.mean([r.customer_mean_coupon for r in runs], axis=0)
        ids = runs[0].customer_id
        sens = sensitive_mask[ids]
        hist_s = _offer_histogram(runs, sens, grid.size)
        hist_i = _offer_histogram(runs, ~sens, grid.size)
        per_policy[kind] = {
            "segment_revenue": {"sensitive": float(rev[sens].mean()),
                                "insensitive": float(rev[~sens].mean())},
            "mean_offer": {"sensitive": float(coupon[sens].mean()),
                           "insensitive": float(coupon[~sens].mean())},
            "offer_histogram": {"sensitive": hist_s, "insensitive": hist_i},
        }

    cust, acts, rews = dataset.customer_table()
    sens_rows = sensitive_mask[cust]
    offline = {}
    for name, mask in (("sensitive", sens_rows), ("insensitive", ~sens_rows)):
        means = []
        for a in range(grid.size):
            sel = mask & (acts == a)
            means.append(float(rews[sel].mean()) if np.any(sel) else 0.0)
        offline[name] = means

    return SegmentReport(median_coef=median, degenerate=degenerate,
                         n_sensitive=int(sensitive_mask.sum()),
                         n_insensitive=int((~sensitive_mask).sum()),
                         per_policy=per_policy, offline_mean_reward=offline,
                         grid=grid.tolist())


def _offer_histogram(runs: list[EvalRun], mask: np.ndarray, n_arms: int) -> list[float]:
    """Offered-coupon frequency over the segment, pooled across runs."""
    counts = np.zeros(n_arms)
    for r in runs:
        counts += r.action_counts[mask].sum(axis=0)
    total = counts.sum()
    if total == 0.0:
        return [0.0] * n_arms
    return (counts / total).tolist()
