"""Synthetic planted-block datasets with known structure for testing and demos.

Items live in equally sized blocks. Relation 0 connects items within the base
partition; every further relation uses its own permuted copy of the partition,
so the relations genuinely disagree about which items belong together.
Features are noisy block centroids (of the base partition), users have a home
block, and a configurable fraction of items is withheld as zero-shot: present
in the item set, stripped of every edge, and reserved for late interactions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .finetune import ZeroShotBatch
from .graph import ProductKnowledgeGraph, build_graph, delete_items

DEFAULT_RELATIONS = ("alsoBought", "alsoViewed", "boughtTogether")


@dataclass
class SyntheticSpec:
    num_items: int = 300
    num_blocks: int = 3
    num_relations: int = 3
    p_in: float = 0.2
    p_out: float = 0.01
    d_in: int = 16
    feature_noise: float = 0.3
    centroid_scale: float = 1.0
    num_users: int = 40
    events_per_user: int = 30
    zs_frac: float = 0.0
    seed: int = 0
    home_block_affinity: float = 0.8
    zs_eval_boost: float = 0.5
    aligned_relation: int = 0  # users' home blocks follow this relation's partition

    def relation_names(self) -> tuple:
        names = list(DEFAULT_RELATIONS[: self.num_relations])
        while len(names) < self.num_relations:
            names.append(f"rel{len(names)}")
        return tuple(names)


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    graph: ProductKnowledgeGraph  # complete graph, all edges attached
    train_graph: ProductKnowledgeGraph  # zero-shot items isolated
    interactions: list  # (user_key, item_key, ts) rows
    zs_items: np.ndarray
    zs_batch: ZeroShotBatch  # re-attaches exactly the withheld edges
    base_labels: np.ndarray
    relation_labels: list = field(repr=False, default=None)
    home_blocks: np.ndarray = field(repr=False, default=None)


def _block_edges(labels: np.ndarray, p_in: float, p_out: float, rng) -> np.ndarray:
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, p_in, p_out)
    keep = rng.random(len(iu)) < prob
    return np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    if spec.num_items < spec.num_blocks:
        raise ValueError("need at least one item per block")
    if not 0.0 <= spec.p_out < spec.p_in <= 1.0:
        raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={spec.p_in} p_out={spec.p_out}")
    if not 0.0 <= spec.zs_frac <= 0.5:
        raise ValueError(f"zero-shot fraction must be in [0, 0.5], got {spec.zs_frac}")
    if not 0 <= spec.aligned_relation < spec.num_relations:
        raise ValueError(f"aligned relation {spec.aligned_relation} out of range")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x67656E]))
    n, b = spec.num_items, spec.num_blocks

    base_labels = np.repeat(np.arange(b), -(-n // b))[:n]
    relation_labels = [base_labels]
    for _ in range(1, spec.num_relations):
        relation_labels.append(base_labels[rng.permutation(n)])

    names = spec.relation_names()
    item_keys = [f"item{i:04d}" for i in range(n)]
    triplets = []
    for r in range(spec.num_relations):
        for h, t in _block_edges(relation_labels[r], spec.p_in, spec.p_out, rng):
            triplets.append((item_keys[h], names[r], item_keys[t]))

    centroids = spec.centroid_scale * rng.normal(size=(b, spec.d_in))
    feats = centroids[base_labels] + spec.feature_noise * rng.normal(size=(n, spec.d_in))
    feats = feats.astype(np.float32).astype(np.float64)  # exact under float32 round-trip

    graph = build_graph(triplets, feats, names, item_keys=item_keys)

    num_zs = int(round(spec.zs_frac * n))
    zs_items = np.sort(rng.choice(n, size=num_zs, replace=False)) if num_zs else np.zeros(0, np.int64)
    zs_set = set(zs_items.tolist())
    attach = []
    for e in graph.edges:
        if len(e):
            incident = np.isin(e[:, 0], zs_items) | np.isin(e[:, 1], zs_items)
            attach.append(e[incident])
        else:
            attach.append(np.zeros((0, 2), dtype=np.int64))
    train_graph = delete_items(graph, zs_items)

    home_blocks = rng.integers(0, b, size=spec.num_users)
    align_labels = relation_labels[spec.aligned_relation]
    interactions = _generate_events(spec, rng, align_labels, home_blocks, zs_set, item_keys)

    return SyntheticDataset(
        spec=spec,
        graph=graph,
        train_graph=train_graph,
        interactions=interactions,
        zs_items=zs_items,
        zs_batch=ZeroShotBatch(attach_edges=attach),
        base_labels=base_labels,
        relation_labels=relation_labels,
        home_blocks=home_blocks,
    )


def _generate_events(spec, rng, align_labels, home_blocks, zs_set, item_keys):
    """Timestamped events; zero-shot items only ever appear past the train cut.

    Timestamps are distinct and increasing, so the position of an event in the
    schedule decides its split under the 80/10/10 quantile rule; the first 80%
    of slots draw from warm items only, later slots favor zero-shot items.
    Home-block pools follow the aligned relation's partition.
    """
    n = len(align_labels)
    total = spec.num_users * spec.events_per_user
    if total == 0:
        return []
    warm_mask = np.ones(n, dtype=bool)
    if zs_set:
        warm_mask[list(zs_set)] = False
    pools_warm = [np.flatnonzero(warm_mask & (align_labels == blk)) for blk in range(spec.num_blocks)]
    pools_all = [np.flatnonzero(align_labels == blk) for blk in range(spec.num_blocks)]
    pools_zs = [np.flatnonzero(~warm_mask & (align_labels == blk)) for blk in range(spec.num_blocks)]
    any_warm = np.flatnonzero(warm_mask)
    any_zs = np.flatnonzero(~warm_mask)

    user_seq = rng.permutation(np.repeat(np.arange(spec.num_users), spec.events_per_user))
    n_train = int(np.ceil(0.8 * total))
    ts0 = 1_600_000_000
    rows = []
    for k in range(total):
        u = int(user_seq[k])
        blk = int(home_blocks[u])
        in_home = rng.random() < spec.home_block_affinity
        if k < n_train:
            pool = pools_warm[blk] if in_home else any_warm
            if not len(pool):
                pool = any_warm
        else:
            want_zs = bool(zs_set) and rng.random() < spec.zs_eval_boost
            if want_zs:
                pool = pools_zs[blk] if in_home and len(pools_zs[blk]) else any_zs
            else:
                pool = pools_all[blk] if in_home else np.arange(n)
        item = int(pool[rng.integers(0, len(pool))])
        rows.append((f"user{u:03d}", item_keys[item], ts0 + 3600 * k))
    return rows


def gradcheck_fixture(seed: int = 0) -> SyntheticDataset:
    """Small fixture for gradient checking: 20 items, 3 relations, 16 features.

    Sparse enough that some items have non-trivial 2-hop complements, so the
    neighbor-ranking loss sees real negative samples.
    """
    return generate_synthetic(
        SyntheticSpec(
            num_items=20,
            num_blocks=2,
            num_relations=3,
            p_in=0.25,
            p_out=0.02,
            d_in=16,
            num_users=4,
            events_per_user=5,
            zs_frac=0.0,
            seed=seed,
        )
    )
