"""Pairwise-ranking fine-tuning of the fusion gate, and inductive inference.

Fine-tuning keeps every pre-trained tensor frozen and only moves the gate that
mixes the per-relation embeddings into one recommendation embedding; users are
represented by the mean of their train-interacted items, so the preference
score is a plain dot product. Inference for unseen items rebuilds propagation
on the updated graph and reuses the frozen projections.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .adaptation import fuse_relations, relation_weights
from .autodiff import backward, constant
from .evaluation import eval_zsir
from .graph import ProductKnowledgeGraph, add_edges, append_items
from .interactions import InteractionSplit, per_user_items
from .model import GATE_NAMES, ParamSet
from .optim import OptState, adam_step
from .pretrain import NegativeSampler
from .propagation import RelationPropagator

logger = logging.getLogger(__name__)


@dataclass
class FinetuneConfig:
    epochs: int = 50
    lr: float = 0.01
    l2: float = 0.0
    batch_size: int = 256
    seed: int = 0
    eval_every: int = 1
    eval_topn: int = 20
    negative_tries: int = 50


@dataclass
class ZeroShotBatch:
    """Graph update for inductive inference: optional new rows plus edges.

    ``attach_edges`` are per-relation (m, 2) arrays in the *updated* id space
    (existing items keep their ids; new rows take the next ones), so the same
    type covers both re-attaching withheld items and inserting new ones.
    """

    attach_edges: list
    new_features: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    new_keys: tuple = ()

    @property
    def num_new(self) -> int:
        return 0 if self.new_features.size == 0 else self.new_features.shape[0]


def embed_graph(graph: ProductKnowledgeGraph, params: ParamSet, m_layers: int):
    """Frozen forward pass: per-relation embeddings, gate weights, fused matrix."""
    prop = RelationPropagator.from_graph(graph, m_layers)
    embs = [prop.propagated[r] @ params.w[r].data for r in range(params.num_relations)]
    weights = relation_weights(params.gate, [constant(e) for e in embs]).data
    fused = np.zeros_like(embs[0])
    for wr, e in zip(weights, embs):
        fused += wr * e
    return embs, weights, fused


def fuse_with_weights(embs: list, weights: np.ndarray) -> np.ndarray:
    """Plain weighted sum, for comparing against hand-picked gate weights."""
    fused = np.zeros_like(embs[0])
    for wr, e in zip(weights, embs):
        fused += wr * e
    return fused


def inductive_infer(
    graph: ProductKnowledgeGraph,
    params: ParamSet,
    m_layers: int,
    batch: ZeroShotBatch | None = None,
):
    """Embeddings for an updated graph without touching any trained tensor.

    Appends the batch's new items (if any), unions its edges in, then re-runs
    propagation and the frozen projections + gate. Passing ``batch=None`` (or
    an empty batch) reproduces the plain forward pass exactly.
    """
    g = graph
    if batch is not None:
        if batch.num_new:
            g = append_items(g, batch.new_features, batch.new_keys or None)
        if any(len(e) for e in batch.attach_edges):
            g = add_edges(g, batch.attach_edges)
    embs, weights, fused = embed_graph(g, params, m_layers)
    return g, embs, weights, fused


def bpr_loss_value(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Reference value of the pairwise loss, for reporting."""
    from scipy.special import log_expit

    return float(-np.sum(log_expit(pos_scores - neg_scores)))


@dataclass
class FinetuneResult:
    params: ParamSet  # best-validation gate, frozen rest
    history: list
    best_epoch: int
    best_valid_ndcg: float
    gate_weights: np.ndarray


def finetune(
    graph: ProductKnowledgeGraph,
    params: ParamSet,
    split: InteractionSplit,
    config: FinetuneConfig,
    m_layers: int,
    num_users: int | None = None,
) -> FinetuneResult:
    """Optimize the gate on train interactions; pick the best epoch by NDCG.

    The per-relation embeddings are constants here (projections are frozen and
    the graph is fixed), so each step only differentiates through the gate ->
    softmax -> weighted-sum -> dot-product chain.
    """
    cfg = config
    if num_users is None:
        num_users = split.train.num_users
    prop = RelationPropagator.from_graph(graph, m_layers)
    emb_arrays = [prop.propagated[r] @ params.w[r].data for r in range(params.num_relations)]
    emb_consts = [constant(emb_arrays[r], name=f"e{r}") for r in range(params.num_relations)]
    named = params.named_tensors()

    train_items = per_user_items(split.train, num_users)
    train_sets = [set(v.tolist()) for v in train_items]
    valid_items = per_user_items(split.valid, num_users)

    # flat layout of every user's train items, for batched profile means
    user_offsets = np.zeros(num_users + 1, dtype=np.int64)
    for u, items in enumerate(train_items):
        user_offsets[u + 1] = user_offsets[u] + len(items)
    flat_items = (
        np.concatenate([v for v in train_items if len(v)])
        if user_offsets[-1]
        else np.zeros(0, dtype=np.int64)
    )

    events_u = split.train.user
    events_i = split.train.item
    n_events = len(events_u)
    if n_events == 0:
        raise ValueError("no train interactions to fine-tune on")

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x627072]))
    neg = NegativeSampler(
        np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x62706E])),
        graph.num_items,
        cfg.negative_tries,
        forbid_self=False,
    )
    opt = OptState()
    steps = math.ceil(n_events / cfg.batch_size)

    def valid_ndcg() -> float:
        _, weights, fused = _gate_forward_np(params, emb_arrays)
        rep = eval_zsir(fused, train_items, valid_items, setting="all", topn=(cfg.eval_topn,))
        if not rep.cohorts:
            return float("nan")
        return rep.get("users").metrics[f"ndcg@{cfg.eval_topn}"]

    history = []
    best_ndcg, best_epoch = -1.0, 0
    best_gate = [t.data.copy() for t in params.gate.tensors()]

    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n_events)
        epoch_loss = 0.0
        for step in range(steps):
            batch = perm[step * cfg.batch_size : (step + 1) * cfg.batch_size]
            if not len(batch):
                continue
            bu, bi = events_u[batch], events_i[batch]
            bneg, ok = neg.sample(bu, train_sets)
            if not ok.all():
                bu, bi, bneg = bu[ok], bi[ok], bneg[ok]
            if not len(bu):
                continue
            for t in named.values():
                t.zero_grad()
            fused = fuse_relations(params.gate, emb_consts)
            uniq, inverse = np.unique(bu, return_inverse=True)
            idx = np.concatenate([flat_items[user_offsets[u] : user_offsets[u + 1]] for u in uniq])
            offs = np.zeros(len(uniq) + 1, dtype=np.int64)
            for k, u in enumerate(uniq):
                offs[k + 1] = offs[k] + (user_offsets[u + 1] - user_offsets[u])
            profiles = ad.group_mean_rows(fused, idx, offs)
            e_u = ad.gather_rows(profiles, inverse)
            p_pos = ad.row_dot(e_u, ad.gather_rows(fused, bi))
            p_neg = ad.row_dot(e_u, ad.gather_rows(fused, bneg))
            loss = ad.neg(ad.tsum(ad.log(ad.clipped_sigmoid(ad.sub(p_pos, p_neg)))))
            epoch_loss += float(loss.data)
            backward(loss)
            adam_step(named, opt, cfg.lr, cfg.l2, free=set(GATE_NAMES))

        ndcg = float("nan")
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            ndcg = valid_ndcg()
            if ndcg > best_ndcg:
                best_ndcg = ndcg
                best_epoch = epoch
                best_gate = [t.data.copy() for t in params.gate.tensors()]
        history.append({"epoch": epoch, "bpr": epoch_loss, "valid_ndcg": ndcg})

    for t, arr in zip(params.gate.tensors(), best_gate):
        t.data = arr
    _, weights, _ = _gate_forward_np(params, emb_arrays)
    return FinetuneResult(
        params=params,
        history=history,
        best_epoch=best_epoch,
        best_valid_ndcg=best_ndcg,
        gate_weights=weights,
    )


def _gate_forward_np(params: ParamSet, emb_arrays: list):
    weights = relation_weights(params.gate, [constant(e) for e in emb_arrays]).data
    fused = fuse_with_weights(emb_arrays, weights)
    return emb_arrays, weights, fused


def finetune_history_tsv(history: list) -> str:
    lines = ["epoch\tbpr\tvalid_ndcg"]
    for row in history:
        lines.append(f"{row['epoch']}\t{row['bpr']:.10f}\t{row['valid_ndcg']:.10f}")
    return "\n".join(lines) + "\n"
