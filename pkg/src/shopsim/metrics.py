"""Evaluation metric suite and its normalization against the random policy."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

METRIC_NAMES = ("accumulated_revenue", "accumulated_demand", "retention",
                "category_penetration", "coupon_discount")


@dataclass
class EvalRun:
    """Evaluation record of one trained policy instance.

    ``episode_metrics`` holds one row per evaluation episode; the per-customer
    aggregates (averaged over episodes) feed the segment analysis.
    """

    kind: str
    agent_seed: int
    episode_metrics: np.ndarray        # (n_eval, 5) per METRIC_NAMES
    customer_id: np.ndarray            # (N,)
    customer_revenue: np.ndarray       # (N,) mean accumulated revenue
    customer_mean_coupon: np.ndarray   # (N,) mean offered coupon fraction
    action_counts: np.ndarray | None = None  # (N, n_arms) offered-action counts
    hyperparams: dict = field(default_factory=dict)

    def metric_means(self) -> np.ndarray:
        return self.episode_metrics.mean(axis=0)


@dataclass
class MetricsReport:
    """Five metrics, raw and normalized by the random-policy mean."""

    kind: str
    n_policies: int
    raw_mean: dict[str, float]
    raw_se: dict[str, float]
    normalized_mean: dict[str, float]
    normalized_se: dict[str, float]
    p_value_revenue: float
    degenerate: list[str]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_policies": self.n_policies,
                "raw_mean": self.raw_mean, "raw_se": self.raw_se,
                "normalized_mean": self.normalized_mean,
                "normalized_se": self.normalized_se,
                "p_value_revenue": self.p_value_revenue,
                "degenerate": self.degenerate}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _per_policy_values(runs: list[EvalRun]) -> np.ndarray:
    """(n_policies, 5): each policy's metrics averaged over its episodes."""
    return np.stack([r.metric_means() for r in runs])


def welch_p_value(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sided unequal-variance t-test; 1.0 when both sides are constant."""
    if np.std(a) == 0.0 and np.std(b) == 0.0:
        return 1.0 if np.mean(a) == np.mean(b) else 0.0
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


def compute_metrics(runs: list[EvalRun], random_runs: list[EvalRun]) -> MetricsReport:
    """Aggregate eval runs and normalize each metric by the random-policy mean.

    The significance test is a two-sided Welch t-test on the per-policy
    accumulated-revenue values against the random policy's.
    """
    if not runs or not random_runs:
        raise ValueError("need at least one run on each side")
    vals = _per_policy_values(runs)
    rand = _per_policy_values(random_runs).mean(axis=0)

    n = vals.shape[0]
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(5)

    degenerate = [name for i, name in enumerate(METRIC_NAMES) if rand[i] == 0.0]
    denom = np.where(rand == 0.0, 1.0, rand)

    rev = _per_policy_values(runs)[:, 0]
    rev_rand = _per_policy_values(random_runs)[:, 0]
    return MetricsReport(
        kind=runs[0].kind, n_policies=n,
        raw_mean={k: float(mean[i]) for i, k in enumerate(METRIC_NAMES)},
        raw_se={k: float(se[i]) for i, k in enumerate(METRIC_NAMES)},
        normalized_mean={k: float(mean[i] / denom[i]) for i, k in enumerate(METRIC_NAMES)},
        normalized_se={k: float(se[i] / denom[i]) for i, k in enumerate(METRIC_NAMES)},
        p_value_revenue=welch_p_value(rev, rev_rand),
        degenerate=degenerate)


EVALRUN_FORMAT = "shopsim-evalrun-v1"


def save_eval_runs(path, runs: list[EvalRun]) -> None:
    """Persist a list of eval runs to one ``.npz`` artifact."""
    meta = {"format": EVALRUN_FORMAT, "n_runs": len(runs),
            "runs": [{"kind": r.kind, "agent_seed": r.agent_seed,
                      "hyperparams": r.hyperparams} for r in runs]}
    arrays = {}
    for i, r in enumerate(runs):
        arrays[f"run{i}:episode_metrics"] = r.episode_metrics
        arrays[f"run{i}:customer_id"] = r.customer_id
        arrays[f"run{i}:customer_revenue"] = r.customer_revenue
        arrays[f"run{i}:customer_mean_coupon"] = r.customer_mean_coupon
        arrays[f"run{i}:action_counts"] = r.action_counts
    np.savez(path, meta=np.asarray(json.dumps(meta)), **arrays)


def load_eval_runs(path) -> list[EvalRun]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != EVALRUN_FORMAT:
            raise ValueError(f"unsupported eval-run format: {meta.get('format')}")
        runs = []
        for i, info in enumerate(meta["runs"]):
            runs.append(EvalRun(
                kind=info["kind"], agent_seed=info["agent_seed"],
                hyperparams=info.get("hyperparams", {}),
                episode_metrics=data[f"run{i}:episode_metrics"],
                customer_id=data[f"run{i}:customer_id"],
                customer_revenue=data[f"run{i}:customer_revenue"],
                customer_mean_coupon=data[f"run{i}:customer_mean_coupon"],
                action_counts=data[f"run{i}:action_counts"]))
    return runs


def episode_metrics(revenue: np.ndarray, quantity: np.ndarray, visits: np.ndarray,
                    distinct_categories: np.ndarray,
                    coupon_sum: np.ndarray, purchase_steps: np.ndarray) -> np.ndarray:
    """Metric vector of one evaluation episode from per-customer aggregates.

    revenue/quantity: totals over the window; visits: visit counts;
    distinct_categories: count per customer; coupon_sum / purchase_steps:
    redeemed coupon fractions summed over purchase steps and their count.
    """
    total_purchases = purchase_steps.sum()
    coupon = float(coupon_sum.sum() / total_purchases) if total_purchases else 0.0
    return np.asarray([
        float(revenue.mean()),
        float(quantity.mean()),
        float(np.mean(visits > 0)),
        float(distinct_categories.mean()),
        coupon,
    ])
