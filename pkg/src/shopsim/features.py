"""History summarization and feature relevance.

Raw observations are condensed per customer into a fixed 10-feature vector
maintained by O(1) incremental accumulators; feature relevance against the
reward is scored with a k-nearest-neighbour (Kraskov-style) mutual
information estimator under the max norm.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .choice import BatchStepResult
from .env import Observation

FEATURE_NAMES = (
    "avg_purchase_price",      # spend / units over all purchases so far
    "avg_redeemed_discount",   # mean coupon fraction over purchase steps
    "steps_since_last_visit",
    "visit_frequency",         # visits / steps so far
    "avg_basket_revenue",      # spend / visits
    "distinct_categories",
    "last_coupon",             # most recent offered coupon fraction
    "shelf_price_index",       # catalog mean of current shelf / base price
    "store_marketing",
    "total_quantity",
)


@dataclass(frozen=True)
class FeatureSchema:
    """Feature order plus the z-score statistics learned from a dataset."""

    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "FeatureSchema":
        flat = samples.reshape(-1, samples.shape[-1])
        std = flat.std(axis=0)
        return cls(names=FEATURE_NAMES, mean=flat.mean(axis=0),
                   std=np.where(std > 0.0, std, 1.0))

    def transform(self, h: np.ndarray) -> np.ndarray:
        return (h - self.mean) / self.std

    def hash(self) -> str:
        blob = json.dumps({"names": list(self.names),
                           "mean": self.mean.round(12).tolist(),
                           "std": self.std.round(12).tolist()}).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": self.mean.tolist(),
                "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(names=tuple(d["names"]), mean=np.asarray(d["mean"]),
                   std=np.asarray(d["std"]))


class SummaryAccumulator:
    """Per-customer running statistics behind the history summary H_t.

    ``update`` after each environment step is equivalent to recomputing every
    feature from the full observation history, at O(1) cost per step.
    """

    _ARRAYS = ("n_visits", "last_visit_step", "total_spend", "total_qty",
               "n_purchase_steps", "sum_redeemed", "last_coupon")

    def __init__(self, n_customers: int, n_categories: int, base_price: np.ndarray):
        self.n = n_customers
        self.base_price = base_price
        self.n_steps = 0
        self.n_visits = np.zeros(n_customers)
        self.last_visit_step = np.zeros(n_customers)
        self.total_spend = np.zeros(n_customers)
        self.total_qty = np.zeros(n_customers)
        self.n_purchase_steps = np.zeros(n_customers)
        self.sum_redeemed = np.zeros(n_customers)
        self.last_coupon = np.zeros(n_customers)
        self.categories = np.zeros((n_customers, n_categories), dtype=bool)
        self.shelf_index = 1.0
        self.x_store = 0.0

    def observe_reset(self, obs: Observation) -> None:
        self.shelf_index = float(np.mean(obs.shelf_prices / self.base_price))
        self.x_store = float(obs.x_store)

    def update(self, obs: Observation, action_fractions: np.ndarray,
               result: BatchStepResult) -> None:
        self.n_steps += 1
        self.n_visits += result.visited
        self.last_visit_step[result.visited] = self.n_steps
        if result.cust_rows.size:
            np.add.at(self.total_spend, result.cust_rows,
                      result.unit_prices * result.quantities)
            np.add.at(self.total_qty, result.cust_rows, result.quantities)
            self.categories[result.cust_rows, result.categories] = True
            bought = np.zeros(self.n, dtype=bool)
            bought[result.cust_rows] = True
            self.n_purchase_steps += bought
            self.sum_redeemed += np.where(bought, result.redeemed_discount, 0.0)
        self.last_coupon = np.asarray(action_fractions, dtype=np.float64).copy()
        self.observe_reset(obs)

    def vector(self) -> np.ndarray:
        """Current H_t for every customer, ordered per FEATURE_NAMES."""
        with np.errstate(invalid="ignore", divide="ignore"):
            avg_price = np.where(self.total_qty > 0, self.total_spend / self.total_qty, 0.0)
            avg_disc = np.where(self.n_purchase_steps > 0,
                                self.sum_redeemed / self.n_purchase_steps, 0.0)
            freq = self.n_visits / self.n_steps if self.n_steps else np.zeros(self.n)
            basket = np.where(self.n_visits > 0, self.total_spend / self.n_visits, 0.0)
        return np.column_stack([
            avg_price, avg_disc, self.n_steps - self.last_visit_step, freq, basket,
            self.categories.sum(axis=1).astype(np.float64), self.last_coupon,
            np.full(self.n, self.shelf_index), np.full(self.n, self.x_store),
            self.total_qty])

    # -- persistence (needed to resume summaries past a snapshot) -----------

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {f: getattr(self, f) for f in self._ARRAYS}
        out["categories"] = self.categories
        out["base_price"] = self.base_price
        out["scalars"] = np.asarray([self.n_steps, self.shelf_index, self.x_store])
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "SummaryAccumulator":
        cats = np.asarray(arrays["categories"], dtype=bool)
        acc = cls(cats.shape[0], cats.shape[1], np.asarray(arrays["base_price"]))
        for f in cls._ARRAYS:
            setattr(acc, f, np.asarray(arrays[f]).astype(np.float64).copy())
        acc.categories = cats.copy()
        acc.n_steps = int(arrays["scalars"][0])
        acc.shelf_index = float(arrays["scalars"][1])
        acc.x_store = float(arrays["scalars"][2])
        return acc

    def copy(self) -> "SummaryAccumulator":
        return self.from_arrays(self.to_arrays())


# --- mutual information ------------------------------------------------------

def mutual_information(x: np.ndarray, y: np.ndarray, k: int = 3,
                       jitter_seed: int = 0) -> float:
    """kNN mutual information (nats) between two samples, clipped at zero.

    Chebyshev-metric Kraskov estimator; a vanishing jitter breaks ties so
    discrete-looking marginals do not bias the neighbour counts. Constant
    inputs carry no information and score exactly 0.
    """
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("x and y must have the same number of samples")
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k + 2:
        raise ValueError(f"need at least {k + 2} samples for k={k}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0

    rng = np.random.default_rng(jitter_seed)
    def _jitter(a):
        scale = a.std(axis=0, keepdims=True)
        return a + rng.normal(size=a.shape) * 1e-10 * np.where(scale > 0, scale, 1.0)
    x = _jitter(x)
    y = _jitter(y)

    joint = np.hstack([x, y])
    eps = cKDTree(joint).query(joint, k=k + 1, p=np.inf)[0][:, k]
    radius = np.nextafter(eps, 0.0)  # count strictly inside the k-NN ball
    nx = np.asarray(cKDTree(x).query_ball_point(x, radius, p=np.inf,
                                                return_length=True)) - 1
    ny = np.asarray(cKDTree(y).query_ball_point(y, radius, p=np.inf,
                                                return_length=True)) - 1
    mi = digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1))
    return float(max(mi, 0.0))


def rank_features(features: np.ndarray, rewards: np.ndarray,
                  names: tuple[str, ...] = FEATURE_NAMES,
                  k: int = 3) -> list[tuple[str, float]]:
    """Per-feature MI against the reward, descending; ties break by name."""
    features = np.asarray(features, dtype=np.float64).reshape(-1, len(names))
    rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if features.shape[0] == 0:
        raise ValueError("empty dataset")
    scores = [(name, mutual_information(features[:, i], rewards, k=k))
              for i, name in enumerate(names)]
    return sorted(scores, key=lambda item: (-item[1], item[0]))
