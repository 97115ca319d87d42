"""Coupon-targeting policies: static, random, linear bandits, neural bandit
and a deep Q-learner, all behind one act/update contract.

``act`` takes raw (unstandardized) history summaries, standardizes them with
the feature schema the policy was built against, and never mutates policy
state. ``update`` consumes transition batches and never touches the
environment. Policies serialize to versioned ``.npz`` checkpoints and refuse
to act when the feature schema hash does not match.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import seeds
from .features import FeatureSchema
from .mlp import Mlp, squared_error_grad

CHECKPOINT_FORMAT = "shopsim-policy-v1"

POLICY_KINDS = ("static", "random", "lin-ts", "lin-ucb", "neural-boltzmann", "dqn")

# Hyperparameter search space per tunable policy kind (uniform ranges and
# categorical choices).
HYPERPARAM_SPACE: dict[str, dict[str, Any]] = {
    "lin-ts": {"alpha": (0.1, 0.9), "gamma": (0.1, 0.9)},
    "lin-ucb": {"alpha": (0.1, 0.9), "gamma": (0.1, 0.9)},
    "neural-boltzmann": {"learning_rate": (0.001, 0.05), "temperature": (0.1, 0.9),
                         "hidden_layers": [(8, 2), (16, 4), (32, 8)]},
    "dqn": {"learning_rate": (0.001, 0.01), "gamma": (0.1, 0.9),
            "epsilon": (0.1, 0.9),
            "hidden_layers": [(16, 4), (16, 8), (32, 4), (32, 8), (64, 4), (64, 8)]},
}

# Tuned defaults used when no explicit hyperparameters are given.
DEFAULT_HYPERPARAMS: dict[str, dict[str, Any]] = {
    "static": {"level": 0.0},
    "random": {},
    "lin-ts": {"alpha": 0.7387, "gamma": 0.8119},
    "lin-ucb": {"alpha": 0.8483, "gamma": 0.1088},
    "neural-boltzmann": {"learning_rate": 0.025, "temperature": 0.1665,
                         "hidden_layers": (8, 2)},
    "dqn": {"learning_rate": 0.005, "gamma": 0.8792, "epsilon": 0.1552,
            "hidden_layers": (16, 4), "target_sync": 100},
}


class SchemaMismatch(RuntimeError):
    """Checkpoint/feature-schema pairing is inconsistent."""


@dataclass(frozen=True)
class PolicySpec:
    """What to build: policy kind, hyperparameters, grid and feature space."""

    kind: str
    hyperparams: dict[str, Any] = field(default_factory=dict)

    def resolved(self) -> dict[str, Any]:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        merged = dict(DEFAULT_HYPERPARAMS[self.kind])
        merged.update(self.hyperparams)
        return merged


@dataclass(frozen=True)
class TransitionBatch:
    """Columns of (H_{t-1}, A_{t-1}, R_t) tuples plus the DQN extras."""

    features: np.ndarray       # (n, d) standardized
    actions: np.ndarray        # (n,) arm indices
    rewards: np.ndarray        # (n,)
    next_features: np.ndarray | None = None  # (n, d) standardized
    terminal: np.ndarray | None = None       # (n,) bool

    def __post_init__(self):
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.rewards))):
            raise ValueError("non-finite values in transition batch")


class Policy:
    """Base contract shared by every policy."""

    kind = "abstract"

    def __init__(self, grid: tuple[float, ...], schema: FeatureSchema, seed: int = 0):
        self.grid = tuple(float(g) for g in grid)
        self.n_arms = len(self.grid)
        self.schema = schema
        self.seed = int(seed)
        self.rng = seeds.stream(self.seed, seeds.TAG_POLICY)
        self.hyperparams: dict[str, Any] = {}

    # -- contract -------------------------------------------------------------

    def act(self, h_raw: np.ndarray) -> np.ndarray:
        """Arm index per row of raw features; read-only on policy state."""
        h = self.schema.transform(np.atleast_2d(np.asarray(h_raw, dtype=np.float64)))
        return self._act_std(h)

    def update(self, batch: TransitionBatch) -> None:
        raise NotImplementedError

    def _act_std(self, h: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def check_schema(self, schema_hash: str) -> None:
        if schema_hash != self.schema.hash():
            raise SchemaMismatch(
                f"policy was built for feature schema {self.schema.hash()}, "
                f"got {schema_hash}")

    # -- checkpointing ---------------------------------------------------------

    def _param_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def _load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        pass

    def save(self, path) -> None:
        meta = {"format": CHECKPOINT_FORMAT, "kind": self.kind, "seed": self.seed,
                "grid": list(self.grid), "hyperparams": _jsonable(self.hyperparams),
                "schema": self.schema.to_dict(), "schema_hash": self.schema.hash()}
        np.savez(path, meta=np.asarray(json.dumps(meta)), **self._param_arrays())

    @classmethod
    def load(cls, path) -> "Policy":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"unsupported checkpoint format: {meta.get('format')}")
            arrays = {k: data[k] for k in data.files if k != "meta"}
        schema = FeatureSchema.from_dict(meta["schema"])
        policy = build_policy(PolicySpec(meta["kind"], meta["hyperparams"]),
                              tuple(meta["grid"]), schema, meta["seed"])
        policy._load_param_arrays(arrays)
        return policy


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj


class StaticPolicy(Policy):
    """Everyone gets the same coupon level, every step."""

    kind = "static"

    def __init__(self, grid, schema, seed=0, level: float = 0.0):
        super().__init__(grid, schema, seed)
        matches = [i for i, g in enumerate(self.grid) if np.isclose(g, level)]
        if not matches:
            raise ValueError(f"static level {level} is not on the coupon grid {self.grid}")
        self.level_index = matches[0]
        self.hyperparams = {"level": float(level)}

    def _act_std(self, h):
        return np.full(h.shape[0], self.level_index, dtype=np.int64)

    def update(self, batch):  # nothing to learn
        pass


class RandomPolicy(Policy):
    """Uniform over the grid; the offline collection behaviour policy."""

    kind = "random"

    def _act_std(self, h):
        return self.rng.integers(self.n_arms, size=h.shape[0])

    def update(self, batch):
        pass


class _LinearBandit(Policy):
    """Disjoint per-arm ridge models with a forgetting factor.

    Each update call decays every arm's sufficient statistics by ``gamma``
    once, then accumulates x x^T and R x over the batch per pulled arm.
    """

    def __init__(self, grid, schema, seed=0, alpha: float = 0.5, gamma: float = 1.0):
        super().__init__(grid, schema, seed)
        if not 0.0 < gamma <= 1.0:
            raise ValueError("forgetting factor gamma must be in (0,1]")
        d = len(schema.names)
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        self.precision = np.stack([np.eye(d) for _ in range(self.n_arms)])
        self.response = np.zeros((self.n_arms, d))
        self.hyperparams = {"alpha": self.alpha, "gamma": self.gamma}

    def update(self, batch: TransitionBatch) -> None:
        x = batch.features
        if x.shape[0] == 0:
            return
        self.precision *= self.gamma
        self.response *= self.gamma
        for arm in range(self.n_arms):
            sel = batch.actions == arm
            if np.any(sel):
                xa = x[sel]
                self.precision[arm] += np.einsum("ki,kj->ij", xa, xa)
                self.response[arm] += batch.rewards[sel] @ xa

    def _solves(self):
        """Per-arm (theta_hat, cholesky factor) pairs."""
        out = []
        for arm in range(self.n_arms):
            chol = cho_factor(self.precision[arm], lower=True)
            out.append((cho_solve(chol, self.response[arm]), chol))
        return out

    def _scores_mean(self, h):
        sols = self._solves()
        theta = np.stack([t for t, _ in sols])
        return h @ theta.T, sols

    def _param_arrays(self):
        return {"precision": self.precision, "response": self.response}

    def _load_param_arrays(self, arrays):
        self.precision = arrays["precision"].copy()
        self.response = arrays["response"].copy()


class LinUcbPolicy(_LinearBandit):
    """Upper-confidence-bound action: mean score plus alpha * posterior width."""

    kind = "lin-ucb"

    def _act_std(self, h):
        mean, sols = self._scores_mean(h)
        scores = mean.copy()
        for arm, (_, chol) in enumerate(sols):
            half = cho_solve(chol, h.T)
            scores[:, arm] += self.alpha * np.sqrt(np.einsum("ij,ji->i", h, half))
        return np.argmax(scores, axis=1)  # ties resolve to the lowest index


class LinTsPolicy(_LinearBandit):
    """Thompson sampling from N(theta_hat, alpha^2 A^-1) per arm."""

    kind = "lin-ts"

    def _act_std(self, h):
        sols = self._solves()
        d = h.shape[1]
        scores = np.empty((h.shape[0], self.n_arms))
        for arm, (theta_hat, chol) in enumerate(sols):
            z = self.rng.standard_normal(d)
            # chol is (L, lower) with A = L L^T; L^-T z has covariance A^-1
            perturb = np.linalg.solve(chol[0].T, z)
            scores[:, arm] = h @ (theta_hat + self.alpha * perturb)
        return np.argmax(scores, axis=1)


class NeuralBoltzmannPolicy(Policy):
    """Per-arm reward network with Boltzmann (softmax) exploration."""

    kind = "neural-boltzmann"

    def __init__(self, grid, schema, seed=0, learning_rate: float = 0.01,
                 temperature: float = 0.5, hidden_layers=(8, 2)):
        super().__init__(grid, schema, seed)
        if temperature <= 0.0:
            raise ValueError("temperature must be > 0")
        d = len(schema.names)
        self.learning_rate = float(learning_rate)
        self.temperature = float(temperature)
        self.hidden_layers = tuple(int(u) for u in hidden_layers)
        self.net = Mlp((d, *self.hidden_layers, self.n_arms), self.rng)
        self.hyperparams = {"learning_rate": self.learning_rate,
                            "temperature": self.temperature,
                            "hidden_layers": self.hidden_layers}

    def _act_std(self, h):
        logits = self.net.forward(h) / self.temperature
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        u = self.rng.random(h.shape[0])
        return np.sum(np.cumsum(probs, axis=1) < u[:, None], axis=1)

    def update(self, batch: TransitionBatch) -> None:
        pred = self.net.forward(batch.features)
        _, grad = squared_error_grad(pred, batch.rewards, batch.actions)
        self.net.sgd_step(*self.net.backward(batch.features, grad), self.learning_rate)

    def epoch_loss(self, batch: TransitionBatch) -> float:
        pred = self.net.forward(batch.features)
        rows = np.arange(pred.shape[0])
        return float(np.mean((pred[rows, batch.actions] - batch.rewards) ** 2))

    def _param_arrays(self):
        return {f"p{i}": p for i, p in enumerate(self.net.get_params())}

    def _load_param_arrays(self, arrays):
        self.net.set_params([arrays[f"p{i}"] for i in range(len(arrays))])


class DqnPolicy(Policy):
    """Feedforward Q-network trained by TD(0) with a hard-synced target net."""

    kind = "dqn"

    def __init__(self, grid, schema, seed=0, learning_rate: float = 0.005,
                 gamma: float = 0.9, epsilon: float = 0.15,
                 hidden_layers=(16, 4), target_sync: int = 100):
        super().__init__(grid, schema, seed)
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("discount factor must be in [0,1]")
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0,1]")
        d = len(schema.names)
        self.learning_rate = float(learning_rate)
        self.gamma = float(gamma)
        self.epsilon = float(epsilon)
        self.hidden_layers = tuple(int(u) for u in hidden_layers)
        self.target_sync = int(target_sync)
        self.qnet = Mlp((d, *self.hidden_layers, self.n_arms), self.rng)
        self.target = self.qnet.copy()
        self.updates = 0
        self.hyperparams = {"learning_rate": self.learning_rate, "gamma": self.gamma,
                            "epsilon": self.epsilon, "hidden_layers": self.hidden_layers,
                            "target_sync": self.target_sync}

    def td_targets(self, batch: TransitionBatch) -> np.ndarray:
        y = batch.rewards.astype(np.float64).copy()
        if self.gamma > 0.0 and batch.next_features is not None:
            q_next = self.target.forward(batch.next_features).max(axis=1)
            alive = ~batch.terminal if batch.terminal is not None else True
            y = y + self.gamma * q_next * np.asarray(alive, dtype=np.float64)
        return y

    def update(self, batch: TransitionBatch) -> None:
        y = self.td_targets(batch)
        pred = self.qnet.forward(batch.features)
        _, grad = squared_error_grad(pred, y, batch.actions)
        self.qnet.sgd_step(*self.qnet.backward(batch.features, grad), self.learning_rate)
        self.updates += 1
        if self.updates % self.target_sync == 0:
            self.target = self.qnet.copy()

    def epoch_loss(self, batch: TransitionBatch) -> float:
        y = self.td_targets(batch)
        pred = self.qnet.forward(batch.features)
        rows = np.arange(pred.shape[0])
        return float(np.mean((pred[rows, batch.actions] - y) ** 2))

    def _act_std(self, h):
        greedy = np.argmax(self.qnet.forward(h), axis=1)
        explore = self.rng.random(h.shape[0]) < self.epsilon
        randoms = self.rng.integers(self.n_arms, size=h.shape[0])
        return np.where(explore, randoms, greedy)

    def _param_arrays(self):
        params = self.qnet.get_params()
        out = {f"q{i}": p for i, p in enumerate(params)}
        out |= {f"t{i}": p for i, p in enumerate(self.target.get_params())}
        return out

    def _load_param_arrays(self, arrays):
        n = sum(1 for k in arrays if k.startswith("q"))
        self.qnet.set_params([arrays[f"q{i}"] for i in range(n)])
        self.target.set_params([arrays[f"t{i}"] for i in range(n)])


_BUILDERS = {
    "static": StaticPolicy,
    "random": RandomPolicy,
    "lin-ts": LinTsPolicy,
    "lin-ucb": LinUcbPolicy,
    "neural-boltzmann": NeuralBoltzmannPolicy,
    "dqn": DqnPolicy,
}


def build_policy(spec: PolicySpec, grid: tuple[float, ...], schema: FeatureSchema,
                 seed: int = 0) -> Policy:
    params = spec.resolved()
    if spec.kind in ("neural-boltzmann", "dqn") and "hidden_layers" in params:
        params["hidden_layers"] = tuple(params["hidden_layers"])
    return _BUILDERS[spec.kind](grid, schema, seed, **params)
