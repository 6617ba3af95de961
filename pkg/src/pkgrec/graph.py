"""Product knowledge graph data model: items, typed relations, features, K-hop index.

Edges are stored directed exactly as the triplets supplied them; every consumer
(normalization, neighborhoods, negative sampling) symmetrizes, because the
propagation operator and the dot-product link scores are direction-agnostic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class ProductKnowledgeGraph:
    """Items with typed item-item edges and a dense per-item feature matrix."""

    num_items: int
    relations: tuple[str, ...]
    edges: tuple[np.ndarray, ...]  # per relation: (m_r, 2) int64, deduplicated, no self-edges
    features: np.ndarray  # (num_items, d_in) float64
    item_keys: tuple[str, ...]
    deleted_mask: np.ndarray = field(default=None)  # bool per item, True = isolated by deletion

    def __post_init__(self):
        if self.deleted_mask is None:
            object.__setattr__(self, "deleted_mask", np.zeros(self.num_items, dtype=bool))

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def r_pkg(self, r: int) -> "RPkgView":
        """Single-relation view; shares edge storage and features."""
        if not 0 <= r < self.num_relations:
            raise GraphError(f"relation index {r} out of range [0, {self.num_relations})")
        return RPkgView(relation=r, edges=self.edges[r], num_items=self.num_items)

    def edge_count(self) -> int:
        return sum(len(e) for e in self.edges)


@dataclass(frozen=True)
class RPkgView:
    relation: int
    edges: np.ndarray
    num_items: int

    @property
    def edge_count(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class NeighborhoodIndex:
    """Within-K-hop neighborhoods on the undirected union of all relations."""

    k: int
    neighbors: tuple[np.ndarray, ...]  # per item: sorted array of neighbor ids, self excluded
    cap: int | None

    def neighbor_sets(self) -> list[set]:
        return [set(n.tolist()) for n in self.neighbors]

    def total_pairs(self) -> int:
        return sum(len(n) for n in self.neighbors)


def _dedup_edges(pairs: list[tuple[int, int]]) -> np.ndarray:
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.asarray(pairs, dtype=np.int64)
    return np.unique(arr, axis=0)


def build_graph(
    triplets,
    features,
    relation_names,
    item_keys=None,
) -> ProductKnowledgeGraph:
    """Assemble a graph from (head, relation, tail) triplets.

    Identifiers may be arbitrary strings; dense indices are assigned in
    first-seen order unless an explicit ordered ``item_keys`` list pins them
    (required when some items never appear in a triplet). Duplicate triplets
    collapse to one edge; self-edges are dropped with a warning.
    """
    relation_names = list(relation_names)
    rel_index = {name: r for r, name in enumerate(relation_names)}
    if len(rel_index) != len(relation_names):
        raise GraphError("duplicate relation names")

    if item_keys is not None:
        item_keys = [str(k) for k in item_keys]
        item_index = {k: i for i, k in enumerate(item_keys)}
        if len(item_index) != len(item_keys):
            raise GraphError("duplicate item keys in vocabulary")
    else:
        item_index = {}
        for head, _, tail in triplets:
            for key in (str(head), str(tail)):
                if key not in item_index:
                    item_index[key] = len(item_index)
        item_keys = list(item_index)

    per_relation: list[list[tuple[int, int]]] = [[] for _ in relation_names]
    dropped_self = 0
    for head, rel, tail in triplets:
        if rel not in rel_index:
            raise GraphError(f"unknown relation name {rel!r}")
        try:
            h = item_index[str(head)]
            t = item_index[str(tail)]
        except KeyError as exc:
            raise GraphError(f"item key {exc.args[0]!r} not in vocabulary") from None
        if h == t:
            dropped_self += 1
            continue
        per_relation[rel_index[rel]].append((h, t))
    if dropped_self:
        logger.warning("dropped %d self-edge triplet(s)", dropped_self)

    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise GraphError(f"features must be 2-D, got shape {features.shape}")
    if features.shape[0] != len(item_index):
        raise GraphError(
            f"feature row count {features.shape[0]} does not match item count {len(item_index)}"
        )
    if not np.isfinite(features).all():
        raise GraphError("features contain non-finite entries")

    edges = tuple(_dedup_edges(p) for p in per_relation)
    g = ProductKnowledgeGraph(
        num_items=len(item_index),
        relations=tuple(relation_names),
        edges=edges,
        features=features,
        item_keys=tuple(item_keys),
    )
    features.setflags(write=False)
    return g


def _union_adjacency(graph: ProductKnowledgeGraph) -> list[np.ndarray]:
    """Sorted undirected neighbor arrays on the union of all relations."""
    heads, tails = [], []
    for e in graph.edges:
        if len(e):
            heads.append(e[:, 0])
            tails.append(e[:, 1])
    n = graph.num_items
    if not heads:
        return [np.zeros(0, dtype=np.int64) for _ in range(n)]
    src = np.concatenate(heads + tails)
    dst = np.concatenate(tails + heads)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    out = []
    starts = np.searchsorted(src, np.arange(n), side="left")
    ends = np.searchsorted(src, np.arange(n), side="right")
    for i in range(n):
        out.append(np.unique(dst[starts[i] : ends[i]]))
    return out


def khop_neighbors(
    graph: ProductKnowledgeGraph,
    k: int,
    cap: int | None = 200,
    seed: int = 0,
) -> NeighborhoodIndex:
    """Breadth-first within-K-hop neighborhoods on the undirected relation union.

    Hops 1..k are all included; item itself is excluded. If ``cap`` is set,
    larger neighborhoods are uniformly subsampled with the given seed.
    """
    if k < 1:
        raise GraphError(f"hop count must be >= 1, got {k}")
    adj = _union_adjacency(graph)
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    neighbors = []
    for i in range(graph.num_items):
        frontier = adj[i]
        seen = {i}
        seen.update(frontier.tolist())
        for _ in range(k - 1):
            if not len(frontier):
                break
            nxt = []
            for j in frontier:
                for t in adj[j]:
                    if t not in seen:
                        seen.add(t)
                        nxt.append(t)
            frontier = np.asarray(nxt, dtype=np.int64)
        seen.discard(i)
        found = np.array(sorted(seen), dtype=np.int64)
        if cap is not None and len(found) > cap:
            pick = rng.choice(len(found), size=cap, replace=False)
            found = found[np.sort(pick)]
        neighbors.append(found)
    return NeighborhoodIndex(k=k, neighbors=tuple(neighbors), cap=cap)


def delete_items(graph: ProductKnowledgeGraph, items) -> ProductKnowledgeGraph:
    """Isolate the given items: drop every incident edge, keep rows and ids.

    The returned graph records the deletion in ``deleted_mask`` (unioned with
    any prior deletions). Deleting an empty set is a no-op; the operation is
    idempotent.
    """
    items = set(int(i) for i in items)
    for i in items:
        if not 0 <= i < graph.num_items:
            raise GraphError(f"item {i} out of range")
    if not items:
        return graph
    drop = np.zeros(graph.num_items, dtype=bool)
    drop[list(items)] = True
    new_edges = tuple(
        e[~(drop[e[:, 0]] | drop[e[:, 1]])] if len(e) else e for e in graph.edges
    )
    return ProductKnowledgeGraph(
        num_items=graph.num_items,
        relations=graph.relations,
        edges=new_edges,
        features=graph.features,
        item_keys=graph.item_keys,
        deleted_mask=graph.deleted_mask | drop,
    )


def remove_edges(graph: ProductKnowledgeGraph, removed: list[np.ndarray]) -> ProductKnowledgeGraph:
    """Drop specific directed edges per relation (used for held-out edge splits)."""
    new_edges = []
    for e, rem in zip(graph.edges, removed):
        if len(rem) == 0 or len(e) == 0:
            new_edges.append(e)
            continue
        keys = e[:, 0] * graph.num_items + e[:, 1]
        rem_keys = rem[:, 0] * graph.num_items + rem[:, 1]
        new_edges.append(e[~np.isin(keys, rem_keys)])
    return ProductKnowledgeGraph(
        num_items=graph.num_items,
        relations=graph.relations,
        edges=tuple(new_edges),
        features=graph.features,
        item_keys=graph.item_keys,
        deleted_mask=graph.deleted_mask,
    )


def add_edges(graph: ProductKnowledgeGraph, extra: list[np.ndarray]) -> ProductKnowledgeGraph:
    """Union extra directed edges per relation into a new graph (deduplicated)."""
    new_edges = []
    for e, ex in zip(graph.edges, extra):
        ex = np.asarray(ex, dtype=np.int64).reshape(-1, 2)
        if len(ex) == 0:
            new_edges.append(e)
            continue
        if ex.max() >= graph.num_items or ex.min() < 0:
            raise GraphError("added edge references an unknown item")
        if (ex[:, 0] == ex[:, 1]).any():
            raise GraphError("added edge is a self-edge")
        merged = np.concatenate([e, ex], axis=0) if len(e) else ex
        new_edges.append(np.unique(merged, axis=0))
    return ProductKnowledgeGraph(
        num_items=graph.num_items,
        relations=graph.relations,
        edges=tuple(new_edges),
        features=graph.features,
        item_keys=graph.item_keys,
        deleted_mask=graph.deleted_mask,
    )


def append_items(
    graph: ProductKnowledgeGraph, new_features, new_keys=None
) -> ProductKnowledgeGraph:
    """Grow the item set: new rows get the next dense indices and no edges yet."""
    new_features = np.asarray(new_features, dtype=np.float64)
    if new_features.ndim != 2 or new_features.shape[1] != graph.d_in:
        raise GraphError(
            f"new feature block must be (k, {graph.d_in}), got {new_features.shape}"
        )
    k = new_features.shape[0]
    if new_keys is None:
        new_keys = [f"new:{graph.num_items + i}" for i in range(k)]
    if len(new_keys) != k:
        raise GraphError("new_keys length does not match new feature rows")
    feats = np.concatenate([graph.features, new_features], axis=0)
    feats.setflags(write=False)
    return ProductKnowledgeGraph(
        num_items=graph.num_items + k,
        relations=graph.relations,
        edges=graph.edges,
        features=feats,
        item_keys=graph.item_keys + tuple(str(s) for s in new_keys),
        deleted_mask=np.concatenate([graph.deleted_mask, np.zeros(k, dtype=bool)]),
    )


def symmetric_neighbor_sets(graph: ProductKnowledgeGraph, r: int) -> list[set]:
    """Per-item neighbor sets under relation r, symmetrized."""
    sets: list[set] = [set() for _ in range(graph.num_items)]
    for h, t in graph.edges[r]:
        sets[h].add(int(t))
        sets[t].add(int(h))
    return sets
