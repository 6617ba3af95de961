"""Dataset directory layout: write a generated dataset to disk, load it back.

A dataset directory holds:

  triplets.tsv      complete graph as head<TAB>relation<TAB>tail item keys
  features.bin      item feature matrix (raw float32, see io.save_features)
  vocab.tsv         id<TAB>item-key, fixing the integer id space
  interactions.tsv  user-key<TAB>item-key<TAB>unix-ts
  zs_items.tsv      one held-out item key per line (omitted when none)
  manifest.json     relation names, row counts, sha256 of every payload file

The loader rebuilds the complete graph, derives the training graph by
detaching the held-out items, and reconstructs the attachment batch from the
edges incident to them — so a round trip reproduces exactly what the
generator handed to training.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from . import io as pio
from .finetune import ZeroShotBatch
from .graph import ProductKnowledgeGraph, build_graph, delete_items
from .interactions import InteractionDataset, build_interactions
from .synthetic import SyntheticDataset

MANIFEST_FORMAT = "pkg-dataset-v1"

_PAYLOAD_FILES = ("triplets.tsv", "features.bin", "vocab.tsv", "interactions.tsv")


@dataclasses.dataclass
class DatasetBundle:
    """Everything the pipeline needs, reloaded from a dataset directory."""

    graph: ProductKnowledgeGraph
    train_graph: ProductKnowledgeGraph
    interactions: InteractionDataset
    zs_items: np.ndarray
    zs_batch: ZeroShotBatch
    manifest: dict

    @property
    def relation_names(self) -> tuple:
        return self.graph.relations


def attachment_edges(graph: ProductKnowledgeGraph, items: np.ndarray) -> list:
    """Per-relation edges of ``graph`` incident to ``items`` (complete-graph ids)."""
    out = []
    for e in graph.edges:
        if len(e):
            incident = np.isin(e[:, 0], items) | np.isin(e[:, 1], items)
            out.append(e[incident])
        else:
            out.append(np.zeros((0, 2), dtype=np.int64))
    return out


def write_dataset(out_dir, ds: SyntheticDataset) -> dict:
    """Write ``ds`` under ``out_dir`` and return the manifest dict."""
    os.makedirs(out_dir, exist_ok=True)
    g = ds.graph
    triplets = []
    for r, name in enumerate(g.relations):
        for h, t in g.edges[r]:
            triplets.append((g.item_keys[h], name, g.item_keys[t]))
    pio.save_triplets(os.path.join(out_dir, "triplets.tsv"), triplets)
    pio.save_features(os.path.join(out_dir, "features.bin"), g.features)
    pio.save_vocab(os.path.join(out_dir, "vocab.tsv"), g.item_keys)
    pio.save_interactions(os.path.join(out_dir, "interactions.tsv"), ds.interactions)

    files = list(_PAYLOAD_FILES)
    if len(ds.zs_items):
        with open(os.path.join(out_dir, "zs_items.tsv"), "w", encoding="utf-8") as f:
            for i in ds.zs_items:
                f.write(f"{g.item_keys[i]}\n")
        files.append("zs_items.tsv")

    manifest = {
        "format": MANIFEST_FORMAT,
        "relations": list(g.relations),
        "num_items": g.num_items,
        "feature_dim": g.features.shape[1],
        "counts": {
            "triplets": len(triplets),
            "interactions": len(ds.interactions),
            "zs_items": int(len(ds.zs_items)),
        },
        "files": {name: pio.sha256_file(os.path.join(out_dir, name)) for name in files},
        "generator": dataclasses.asdict(ds.spec),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def load_dataset(data_dir) -> DatasetBundle:
    """Load a dataset directory, verifying manifest hashes along the way."""
    manifest_path = os.path.join(data_dir, "manifest.json")
    try:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise pio.FormatError(f"{manifest_path}: no manifest (not a dataset directory?)")
    except json.JSONDecodeError as exc:
        raise pio.FormatError(f"{manifest_path}: invalid JSON ({exc})")
    if manifest.get("format") != MANIFEST_FORMAT:
        raise pio.FormatError(
            f"{manifest_path}: unsupported format {manifest.get('format')!r}"
        )

    for name, digest in manifest.get("files", {}).items():
        path = os.path.join(data_dir, name)
        if not os.path.exists(path):
            raise pio.FormatError(f"{path}: listed in manifest but missing")
        actual = pio.sha256_file(path)
        if actual != digest:
            raise pio.FormatError(f"{path}: sha256 mismatch (file modified?)")

    item_keys = pio.load_vocab(os.path.join(data_dir, "vocab.tsv"))
    features = pio.load_features(os.path.join(data_dir, "features.bin")).astype(np.float64)
    if features.shape[0] != len(item_keys):
        raise pio.FormatError(
            f"feature rows ({features.shape[0]}) != vocab size ({len(item_keys)})"
        )
    triplets = pio.load_triplets(os.path.join(data_dir, "triplets.tsv"))
    relations = list(manifest["relations"])
    graph = build_graph(triplets, features, relations, item_keys=item_keys)

    index = {k: i for i, k in enumerate(item_keys)}
    zs_path = os.path.join(data_dir, "zs_items.tsv")
    zs_keys = []
    if os.path.exists(zs_path):
        with open(zs_path, encoding="utf-8") as f:
            zs_keys = [line.strip() for line in f if line.strip()]
    missing = [k for k in zs_keys if k not in index]
    if missing:
        raise pio.FormatError(f"zs_items.tsv: unknown item keys {missing[:5]}")
    zs_items = np.sort(np.array([index[k] for k in zs_keys], dtype=np.int64))

    rows = pio.load_interactions(os.path.join(data_dir, "interactions.tsv"))
    interactions = build_interactions(rows, index)

    return DatasetBundle(
        graph=graph,
        train_graph=delete_items(graph, zs_items),
        interactions=interactions,
        zs_items=zs_items,
        zs_batch=ZeroShotBatch(attach_edges=attachment_edges(graph, zs_items)),
        manifest=manifest,
    )
