"""Offline training dataset: transition tuples, paired environment snapshots
and the feature schema, in one self-describing ``.npz`` container.

Layout (format ``shopsim-dataset-v1``):
  meta                JSON string: format, config, config hash, seed, shape,
                      feature schema (names + standardization stats),
                      per-batch snapshot metadata.
  features            (N_batch, B, T+1, d) raw summaries H_0..H_T
  actions             (N_batch, B, T) grid indices A_0..A_{T-1}
  rewards             (N_batch, B, T) rewards R_1..R_T
  snapshot{n}:{key}   state arrays of batch n's end-of-collection snapshot
  summary{n}:{key}    feature-accumulator arrays to resume H past step T
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import SimConfig, config_hash
from .env import EnvSnapshot
from .features import FeatureSchema, SummaryAccumulator

DATASET_FORMAT = "shopsim-dataset-v1"


@dataclass
class OfflineDataset:
    """Collected trajectories of shape (N_batch, B, T) plus resume state."""

    config: SimConfig
    seed: int
    features: np.ndarray   # (N_batch, B, T+1, d)
    actions: np.ndarray    # (N_batch, B, T)
    rewards: np.ndarray    # (N_batch, B, T)
    snapshots: list[EnvSnapshot]
    summaries: list[SummaryAccumulator]
    schema: FeatureSchema

    @property
    def n_batches(self) -> int:
        return self.features.shape[0]

    @property
    def batch_size(self) -> int:
        return self.features.shape[1]

    @property
    def horizon(self) -> int:
        return self.actions.shape[2]

    @property
    def n_customers(self) -> int:
        return self.n_batches * self.batch_size

    @property
    def n_tuples(self) -> int:
        return self.n_batches * self.batch_size * self.horizon

    def batch_tuples(self, n: int):
        """Transition columns of batch ``n`` flattened to (B*T, ...).

        Returns (features, actions, rewards, next_features, terminal) with
        features standardized by the dataset schema.
        """
        B, T, d = self.batch_size, self.horizon, self.features.shape[3]
        h = self.schema.transform(self.features[n])
        feats = h[:, :T, :].reshape(B * T, d)
        nxt = h[:, 1:T + 1, :].reshape(B * T, d)
        term = np.zeros((B, T), dtype=bool)
        term[:, -1] = True
        return (feats, self.actions[n].reshape(-1).astype(np.int64),
                self.rewards[n].reshape(-1), nxt, term.reshape(-1))

    def customer_table(self):
        """(customer_id, action, reward) per tuple, for offline analyses."""
        N, B, T = self.n_batches, self.batch_size, self.horizon
        ids = np.concatenate([s.customer_id for s in self.snapshots])
        cust = np.repeat(ids, T)
        return (cust, self.actions.reshape(-1).astype(np.int64),
                self.rewards.reshape(-1))

    def subset(self, batch_indices: np.ndarray) -> "OfflineDataset":
        idx = np.asarray(batch_indices, dtype=np.int64)
        return OfflineDataset(
            config=self.config, seed=self.seed, features=self.features[idx],
            actions=self.actions[idx], rewards=self.rewards[idx],
            snapshots=[self.snapshots[i] for i in idx],
            summaries=[self.summaries[i] for i in idx], schema=self.schema)

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "format": DATASET_FORMAT,
            "config": self.config.to_dict(),
            "config_hash": config_hash(self.config),
            "seed": self.seed,
            "shape": list(self.features.shape),
            "schema": self.schema.to_dict(),
            "snapshot_meta": [s.meta() for s in self.snapshots],
        }
        arrays = {"features": self.features, "actions": self.actions,
                  "rewards": self.rewards}
        for n, snap in enumerate(self.snapshots):
            for key, arr in snap.to_arrays().items():
                arrays[f"snapshot{n}:{key}"] = arr
        for n, acc in enumerate(self.summaries):
            for key, arr in acc.to_arrays().items():
                arrays[f"summary{n}:{key}"] = arr
        np.savez(path, meta=np.asarray(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "OfflineDataset":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != DATASET_FORMAT:
                raise ValueError(f"unsupported dataset format: {meta.get('format')}")
            n_batches = int(meta["shape"][0])
            snapshots = []
            summaries = []
            for n in range(n_batches):
                snap_arrays = {f: data[f"snapshot{n}:{f}"]
                               for f in EnvSnapshot._ARRAY_FIELDS}
                snapshots.append(EnvSnapshot.from_arrays(meta["snapshot_meta"][n],
                                                         snap_arrays))
                prefix = f"summary{n}:"
                acc_arrays = {k[len(prefix):]: data[k] for k in data.files
                              if k.startswith(prefix)}
                summaries.append(SummaryAccumulator.from_arrays(acc_arrays))
            return cls(config=SimConfig.from_dict(meta["config"]),
                       seed=int(meta["seed"]), features=data["features"],
                       actions=data["actions"], rewards=data["rewards"],
                       snapshots=snapshots, summaries=summaries,
                       schema=FeatureSchema.from_dict(meta["schema"]))
