"""User-item interaction log with a chronological train/valid/test split."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class InteractionDataset:
    """Events as parallel arrays; users and items are dense indices."""

    user: np.ndarray  # (n,) int64
    item: np.ndarray  # (n,) int64
    ts: np.ndarray  # (n,) int64 unix timestamps
    user_keys: tuple

    @property
    def num_events(self) -> int:
        return len(self.ts)

    @property
    def num_users(self) -> int:
        return len(self.user_keys)

    def subset(self, idx: np.ndarray) -> "InteractionDataset":
        return InteractionDataset(self.user[idx], self.item[idx], self.ts[idx], self.user_keys)


@dataclass(frozen=True)
class InteractionSplit:
    train: InteractionDataset
    valid: InteractionDataset
    test: InteractionDataset

    def zero_shot_items(self) -> np.ndarray:
        """Items interacted with in valid/test but never in train, sorted."""
        held = np.union1d(np.unique(self.valid.item), np.unique(self.test.item))
        return np.setdiff1d(held, np.unique(self.train.item))


def build_interactions(rows, item_index: dict) -> InteractionDataset:
    """rows of (user_key, item_key, ts); user indices assigned first-seen."""
    user_index: dict = {}
    users, items, stamps = [], [], []
    for u, i, t in rows:
        u, i = str(u), str(i)
        if i not in item_index:
            raise ValueError(f"interaction references unknown item {i!r}")
        if u not in user_index:
            user_index[u] = len(user_index)
        users.append(user_index[u])
        items.append(item_index[i])
        stamps.append(int(t))
    return InteractionDataset(
        user=np.asarray(users, dtype=np.int64),
        item=np.asarray(items, dtype=np.int64),
        ts=np.asarray(stamps, dtype=np.int64),
        user_keys=tuple(user_index),
    )


def _quantile_ts(sorted_ts: np.ndarray, q: float) -> int:
    n = len(sorted_ts)
    return int(sorted_ts[math.ceil(q * n) - 1])


def chronological_split(ds: InteractionDataset, q_train=0.8, q_valid=0.9) -> InteractionSplit:
    """Split at the q_train/q_valid timestamp quantiles; boundary ties go earlier.

    The cut timestamps are sorted_ts[ceil(q*n) - 1]; events at or before the
    train cut are train, events at or before the valid cut are valid, the rest
    test. With a single distinct timestamp everything lands in train.
    """
    if ds.num_events == 0:
        empty = ds.subset(np.zeros(0, dtype=np.int64))
        return InteractionSplit(empty, empty, empty)
    sorted_ts = np.sort(ds.ts)
    t_train = _quantile_ts(sorted_ts, q_train)
    t_valid = _quantile_ts(sorted_ts, q_valid)
    idx = np.arange(ds.num_events)
    train = idx[ds.ts <= t_train]
    valid = idx[(ds.ts > t_train) & (ds.ts <= t_valid)]
    test = idx[ds.ts > t_valid]
    return InteractionSplit(ds.subset(train), ds.subset(valid), ds.subset(test))


def per_user_items(ds: InteractionDataset, num_users: int) -> list:
    """Multiset of interacted items per user (repeats preserved, event order)."""
    out = [[] for _ in range(num_users)]
    for u, i in zip(ds.user, ds.item):
        out[u].append(int(i))
    return [np.asarray(v, dtype=np.int64) for v in out]


def user_embedding(train_items: np.ndarray, item_embeddings: np.ndarray) -> np.ndarray:
    """Mean of the user's train-interacted item embeddings (zeros if none)."""
    if len(train_items) == 0:
        return np.zeros(item_embeddings.shape[1], dtype=np.float64)
    return item_embeddings[train_items].mean(axis=0)


def ranking_score(user_emb: np.ndarray, item_embeddings: np.ndarray) -> np.ndarray:
    """Dot-product preference score of one user against every item."""
    return item_embeddings @ user_emb
