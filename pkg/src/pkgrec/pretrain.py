"""Multi-task self-supervised pre-training over the product knowledge graph.

Four objectives share the per-relation embeddings E^r produced by the linear
propagation encoder:

  * link reconstruction per relation (BCE on edges vs sampled non-edges),
  * feature reconstruction (one decoder FC on the concatenated embeddings),
  * K-hop neighbor ranking (BCE on the concatenated embeddings),
  * cross-relation alignment (BCE scored by a gated sum of the *other*
    relations' embeddings).

The weighted sum of the four is minimized with Adam; the per-relation
propagated features are fixed, so each step only differentiates through the
projection matrices, the decoder, and the gate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .adaptation import excitation_logits, toa_concat, toa_weighted_sum
from .autodiff import Tensor, backward, constant
from .evaluation import eval_knowledge_prediction
from .graph import ProductKnowledgeGraph, khop_neighbors, symmetric_neighbor_sets
from .model import GATE_NAMES, ParamSet
from .optim import OptState, adam_step
from .propagation import RelationPropagator

logger = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    dim: int = 32
    m_layers: int = 3
    k_hops: int = 2
    kr_weight: float = 1.0
    fr_weight: float = 0.001
    hnr_weight: float = 0.01
    mra_weight: float = 1.0
    batch_size: int = 256
    epochs: int = 200
    lr: float = 0.05
    l2: float = 1e-6
    seed: int = 0
    hnr_budget_per_item: int = 50
    neighbor_cap: int = 200
    edge_split: tuple = (0.8, 0.1, 0.1)
    eval_every: int = 1
    mra_mse: bool = False
    gate_reduction: int = 4
    negative_tries: int = 50


@dataclass
class EdgeSplit:
    train_graph: ProductKnowledgeGraph
    valid: list  # per relation (m, 2) int64
    test: list


def split_edges(graph: ProductKnowledgeGraph, fracs=(0.8, 0.1, 0.1), seed: int = 0) -> EdgeSplit:
    """Random per-relation edge split; the train graph keeps everything else."""
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fracs}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x73706C]))
    train_edges, valid, test = [], [], []
    for e in graph.edges:
        m = len(e)
        perm = rng.permutation(m)
        n_tr = int(fracs[0] * m)
        n_va = int((fracs[0] + fracs[1]) * m) - n_tr
        train_edges.append(np.array(sorted(map(tuple, e[perm[:n_tr]]))).reshape(-1, 2).astype(np.int64))
        valid.append(e[perm[n_tr : n_tr + n_va]])
        test.append(e[perm[n_tr + n_va :]])
    train_graph = ProductKnowledgeGraph(
        num_items=graph.num_items,
        relations=graph.relations,
        edges=tuple(train_edges),
        features=graph.features,
        item_keys=graph.item_keys,
        deleted_mask=graph.deleted_mask,
    )
    return EdgeSplit(train_graph=train_graph, valid=valid, test=test)


def one_minus(t: Tensor) -> Tensor:
    return ad.sub(constant(np.float64(1.0)), t)


def bce_pair_loss(s_pos: Tensor, s_neg: Tensor, scale_by: float) -> Tensor:
    """-scale * sum(log s_pos + log(1 - s_neg)); scores must already be in (0,1)."""
    total = ad.add(ad.tsum(ad.log(s_pos)), ad.tsum(ad.log(one_minus(s_neg))))
    return ad.scale(total, -scale_by)


def kr_loss_batch(emb: Tensor, heads, tails, neg_tails, inv_edges: float) -> Tensor:
    """Link-reconstruction BCE on one relation, scaled by 1/|E^r| of the full set."""
    eh = ad.gather_rows(emb, heads)
    s_pos = ad.clipped_sigmoid(ad.row_dot(eh, ad.gather_rows(emb, tails)))
    s_neg = ad.clipped_sigmoid(ad.row_dot(eh, ad.gather_rows(emb, neg_tails)))
    return bce_pair_loss(s_pos, s_neg, inv_edges)


def hnr_loss_batch(z: Tensor, anchors, pos, neg) -> Tensor:
    """Neighbor-ranking BCE on the concatenated embeddings, raw sum over pairs."""
    za = ad.gather_rows(z, anchors)
    s_pos = ad.clipped_sigmoid(ad.row_dot(za, ad.gather_rows(z, pos)))
    s_neg = ad.clipped_sigmoid(ad.row_dot(za, ad.gather_rows(z, neg)))
    return bce_pair_loss(s_pos, s_neg, 1.0)


def fr_loss_batch(z: Tensor, items, features: np.ndarray, dec_w: Tensor, dec_b: Tensor) -> Tensor:
    """Squared reconstruction error of raw features from concatenated embeddings."""
    recon = ad.add(ad.matmul(ad.gather_rows(z, items), dec_w), dec_b)
    diff = ad.sub(recon, constant(features[items]))
    return ad.tsum(ad.mul(diff, diff))


def mra_loss_batch(
    fused: Tensor, heads, tails, neg_tails, inv_edges: float, mse: bool = False
) -> Tensor:
    """Cross-relation alignment on relation r's edges, scored by the fused others."""
    eh = ad.gather_rows(fused, heads)
    dot_pos = ad.row_dot(eh, ad.gather_rows(fused, tails))
    dot_neg = ad.row_dot(eh, ad.gather_rows(fused, neg_tails))
    if mse:
        d_pos = ad.sub(ad.clipped_sigmoid(dot_pos), constant(np.float64(1.0)))
        d_neg = ad.clipped_sigmoid(dot_neg)
        total = ad.add(ad.tsum(ad.mul(d_pos, d_pos)), ad.tsum(ad.mul(d_neg, d_neg)))
        return ad.scale(total, inv_edges)
    return bce_pair_loss(
        ad.clipped_sigmoid(dot_pos), ad.clipped_sigmoid(dot_neg), inv_edges
    )


class NegativeSampler:
    """Uniform rejection sampler for negatives; skips hopeless anchors."""

    def __init__(self, rng, num_items: int, tries: int = 50, forbid_self: bool = True):
        self.rng = rng
        self.n = num_items
        self.tries = tries
        self.forbid_self = forbid_self  # False when anchors index users, not items
        self._warned = False

    def sample(self, anchors: np.ndarray, excluded: list):
        """One draw per anchor avoiding excluded[anchor] (and the anchor itself).

        Returns (picks, ok); positions with ok == False found no candidate in
        ``tries`` draws (anchor adjacent to nearly everything) and are skipped.
        """
        b = len(anchors)
        out = np.zeros(b, dtype=np.int64)
        ok = np.ones(b, dtype=bool)
        block = self.rng.integers(0, self.n, size=(b, self.tries))
        for k in range(b):
            a = int(anchors[k])
            banned = excluded[a]
            for c in block[k]:
                if (not self.forbid_self or c != a) and int(c) not in banned:
                    out[k] = c
                    break
            else:
                ok[k] = False
                if not self._warned:
                    logger.warning(
                        "no negative found for anchor %d within %d draws; skipping such pairs",
                        a,
                        self.tries,
                    )
                    self._warned = True
        return out, ok


def build_hnr_pairs(graph, k_hops: int, budget_per_item: int, cap: int, seed: int):
    """(anchor, neighbor) pairs within K hops, subsampled to a global budget."""
    index = khop_neighbors(graph, k_hops, cap=cap, seed=seed)
    anchors, pos = [], []
    for i, nbrs in enumerate(index.neighbors):
        if len(nbrs):
            anchors.append(np.full(len(nbrs), i, dtype=np.int64))
            pos.append(nbrs)
    if anchors:
        pairs = np.stack([np.concatenate(anchors), np.concatenate(pos)], axis=1)
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
    budget = budget_per_item * graph.num_items
    if len(pairs) > budget:
        pick_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x686E72]))
        keep = np.sort(pick_rng.choice(len(pairs), size=budget, replace=False))
        pairs = pairs[keep]
    return pairs, index


@dataclass
class PretrainResult:
    params: ParamSet  # best-validation snapshot
    final_params: ParamSet
    history: list  # per-epoch dicts
    best_epoch: int
    best_valid_mrr: float
    split: EdgeSplit
    config: PretrainConfig
    opt_state: OptState = field(repr=False, default=None)


def _stream_slices(perm: np.ndarray, step: int, bs: int) -> np.ndarray:
    lo = step * bs
    if lo >= len(perm):
        return perm[:0]
    return perm[lo : lo + bs]


def pretrain(graph: ProductKnowledgeGraph, config: PretrainConfig, progress=None) -> PretrainResult:
    """Run the full pre-training loop and return the best-validation parameters."""
    cfg = config
    if graph.num_relations == 1 and cfg.mra_weight != 0.0:
        logger.warning("single-relation graph: disabling the relation-alignment task")
        cfg = replace(cfg, mra_weight=0.0)

    split = split_edges(graph, cfg.edge_split, cfg.seed)
    tg = split.train_graph
    propagator = RelationPropagator.from_graph(tg, cfg.m_layers)
    params = ParamSet.init(graph.d_in, cfg.dim, graph.num_relations, cfg.seed, cfg.gate_reduction)
    named = params.named_tensors()
    opt = OptState()

    nbr_sets = [symmetric_neighbor_sets(tg, r) for r in range(tg.num_relations)]
    hnr_pairs, khop = build_hnr_pairs(
        tg, cfg.k_hops, cfg.hnr_budget_per_item, cfg.neighbor_cap, cfg.seed
    )
    khop_sets = khop.neighbor_sets() if cfg.hnr_weight != 0.0 else None
    fr_items = np.flatnonzero(~tg.deleted_mask)

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x736866]))
    neg = NegativeSampler(
        np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x6E6567])),
        tg.num_items,
        cfg.negative_tries,
    )

    use_kr = cfg.kr_weight != 0.0
    use_fr = cfg.fr_weight != 0.0
    use_hnr = cfg.hnr_weight != 0.0 and len(hnr_pairs) > 0
    use_mra = cfg.mra_weight != 0.0 and tg.num_relations > 1
    edge_counts = [len(e) for e in tg.edges]

    stream_lens = []
    if use_kr or use_mra:
        stream_lens += [m for m in edge_counts if m]
    if use_fr:
        stream_lens.append(len(fr_items))
    if use_hnr:
        stream_lens.append(len(hnr_pairs))
    if not stream_lens:
        raise ValueError("nothing to train on: no edges and all tasks disabled")
    steps_per_epoch = max(math.ceil(m / cfg.batch_size) for m in stream_lens)

    history = []
    best_mrr, best_epoch, best_state = -1.0, 0, params.state_arrays()
    best_state = {k: v.copy() for k, v in best_state.items()}

    for epoch in range(1, cfg.epochs + 1):
        edge_perms = [shuffle_rng.permutation(m) if m else np.zeros(0, np.int64) for m in edge_counts]
        fr_perm = shuffle_rng.permutation(len(fr_items)) if use_fr else None
        hnr_perm = shuffle_rng.permutation(len(hnr_pairs)) if use_hnr else None
        sums = {"kr": 0.0, "fr": 0.0, "hnr": 0.0, "mra": 0.0, "total": 0.0}

        for step in range(steps_per_epoch):
            for t in named.values():
                t.zero_grad()
            embs = propagator.encode_all(params.w)
            z = toa_concat(embs) if (use_fr or use_hnr) else None
            logits = (
                excitation_logits(params.gate, embs) if use_mra else None
            )

            terms = []

            if use_kr:
                kr_term = None
                for r in range(tg.num_relations):
                    batch = _stream_slices(edge_perms[r], step, cfg.batch_size)
                    if not len(batch):
                        continue
                    e = tg.edges[r][batch]
                    negs, ok = neg.sample(e[:, 0], nbr_sets[r])
                    if not ok.all():
                        e, negs = e[ok], negs[ok]
                    if not len(e):
                        continue
                    part = kr_loss_batch(embs[r], e[:, 0], e[:, 1], negs, 1.0 / edge_counts[r])
                    kr_term = part if kr_term is None else ad.add(kr_term, part)
                if kr_term is not None:
                    sums["kr"] += float(kr_term.data)
                    terms.append(ad.scale(kr_term, cfg.kr_weight))

            if use_fr:
                batch = _stream_slices(fr_perm, step, cfg.batch_size)
                if len(batch):
                    items = fr_items[batch]
                    fr_term = fr_loss_batch(
                        z, items, tg.features, params.dec_weight, params.dec_bias
                    )
                    sums["fr"] += float(fr_term.data)
                    terms.append(ad.scale(fr_term, cfg.fr_weight))

            if use_hnr:
                batch = _stream_slices(hnr_perm, step, cfg.batch_size)
                if len(batch):
                    pairs = hnr_pairs[batch]
                    negs, ok = neg.sample(pairs[:, 0], khop_sets)
                    if not ok.all():
                        pairs, negs = pairs[ok], negs[ok]
                    if len(pairs):
                        hnr_term = hnr_loss_batch(z, pairs[:, 0], pairs[:, 1], negs)
                        sums["hnr"] += float(hnr_term.data)
                        terms.append(ad.scale(hnr_term, cfg.hnr_weight))

            if use_mra:
                mra_term = None
                for r in range(tg.num_relations):
                    batch = _stream_slices(edge_perms[r], step, cfg.batch_size)
                    if not len(batch):
                        continue
                    e = tg.edges[r][batch]
                    negs, ok = neg.sample(e[:, 0], nbr_sets[r])
                    if not ok.all():
                        e, negs = e[ok], negs[ok]
                    if not len(e):
                        continue
                    others = [r2 for r2 in range(tg.num_relations) if r2 != r]
                    w_sub = ad.softmax(
                        ad.stack_scalars([ad.gather_rows(logits, [r2]) for r2 in others])
                    )
                    fused = toa_weighted_sum([embs[r2] for r2 in others], w_sub)
                    part = mra_loss_batch(
                        fused, e[:, 0], e[:, 1], negs, 1.0 / edge_counts[r], cfg.mra_mse
                    )
                    mra_term = part if mra_term is None else ad.add(mra_term, part)
                if mra_term is not None:
                    sums["mra"] += float(mra_term.data)
                    terms.append(ad.scale(mra_term, cfg.mra_weight))

            if not terms:
                continue
            total = terms[0]
            for t in terms[1:]:
                total = ad.add(total, t)
            sums["total"] += float(total.data)
            backward(total)
            # The gate is the adaptation phase's free parameter and stays at its
            # initialization here. Letting the pre-training tasks co-train it
            # tends to park the ReLU hidden layer in an all-dead region
            # (constant logits, zero gate gradient) that fine-tuning can never
            # escape; gradients still flow *through* the frozen gate into the
            # projections.
            adam_step(named, opt, cfg.lr, cfg.l2, free=set(named) - set(GATE_NAMES))

        valid_mrr = float("nan")
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            valid_mrr = validation_mrr(params, propagator, split, nbr_sets)
            if valid_mrr > best_mrr:
                best_mrr = valid_mrr
                best_epoch = epoch
                best_state = {k: v.copy() for k, v in params.state_arrays().items()}
        row = {
            "epoch": epoch,
            "kr": sums["kr"],
            "fr": sums["fr"],
            "hnr": sums["hnr"],
            "mra": sums["mra"],
            "total": sums["total"],
            "valid_mrr": valid_mrr,
        }
        history.append(row)
        if progress is not None:
            progress(row)

    return PretrainResult(
        params=ParamSet.from_state(best_state),
        final_params=params,
        history=history,
        best_epoch=best_epoch,
        best_valid_mrr=best_mrr,
        split=split,
        config=cfg,
        opt_state=opt,
    )


def build_fixed_losses(
    graph: ProductKnowledgeGraph,
    cfg: PretrainConfig,
    params: ParamSet,
    bpr_events=None,
) -> dict:
    """Deterministic full-batch loss closures for gradient checking.

    Batches and negatives are frozen once, so each closure is a pure function
    of the current parameter values; keys are kr/fr/hnr/mra/total, plus bpr
    when ``bpr_events`` supplies (per-user train item arrays, users, items).
    Unlike fine-tuning, the bpr closure differentiates all the way into the
    projections, which is exactly what a gradient check wants.
    """
    propagator = RelationPropagator.from_graph(graph, cfg.m_layers)
    nbr_sets = [symmetric_neighbor_sets(graph, r) for r in range(graph.num_relations)]
    hnr_pairs, khop = build_hnr_pairs(
        graph, cfg.k_hops, cfg.hnr_budget_per_item, cfg.neighbor_cap, cfg.seed
    )
    khop_sets = khop.neighbor_sets()
    neg = NegativeSampler(
        np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x666E67])),
        graph.num_items,
        cfg.negative_tries,
    )
    edge_batches = []
    for r in range(graph.num_relations):
        e = graph.edges[r]
        negs, ok = neg.sample(e[:, 0], nbr_sets[r]) if len(e) else (np.zeros(0, np.int64), np.ones(0, bool))
        edge_batches.append((e[ok], negs[ok]))
    hnr_negs, hnr_ok = (
        neg.sample(hnr_pairs[:, 0], khop_sets) if len(hnr_pairs) else (np.zeros(0, np.int64), np.ones(0, bool))
    )
    hnr_batch = (hnr_pairs[hnr_ok], hnr_negs[hnr_ok])
    fr_items = np.flatnonzero(~graph.deleted_mask)

    def embs():
        return propagator.encode_all(params.w)

    def kr_fn():
        e = embs()
        total = None
        for r, (pos, negs) in enumerate(edge_batches):
            if not len(pos):
                continue
            part = kr_loss_batch(e[r], pos[:, 0], pos[:, 1], negs, 1.0 / len(pos))
            total = part if total is None else ad.add(total, part)
        return total

    def fr_fn():
        z = toa_concat(embs())
        return fr_loss_batch(z, fr_items, graph.features, params.dec_weight, params.dec_bias)

    def hnr_fn():
        pairs, negs = hnr_batch
        z = toa_concat(embs())
        return hnr_loss_batch(z, pairs[:, 0], pairs[:, 1], negs)

    def mra_fn():
        e = embs()
        logits = excitation_logits(params.gate, e)
        total = None
        for r, (pos, negs) in enumerate(edge_batches):
            if not len(pos):
                continue
            others = [r2 for r2 in range(graph.num_relations) if r2 != r]
            w_sub = ad.softmax(ad.stack_scalars([ad.gather_rows(logits, [r2]) for r2 in others]))
            fused = toa_weighted_sum([e[r2] for r2 in others], w_sub)
            part = mra_loss_batch(fused, pos[:, 0], pos[:, 1], negs, 1.0 / len(pos), cfg.mra_mse)
            total = part if total is None else ad.add(total, part)
        return total

    def total_fn():
        terms = [
            ad.scale(kr_fn(), cfg.kr_weight),
            ad.scale(fr_fn(), cfg.fr_weight),
            ad.scale(hnr_fn(), cfg.hnr_weight),
        ]
        if graph.num_relations > 1:
            terms.append(ad.scale(mra_fn(), cfg.mra_weight))
        total = terms[0]
        for t in terms[1:]:
            total = ad.add(total, t)
        return total

    losses = {"kr": kr_fn, "fr": fr_fn, "hnr": hnr_fn, "total": total_fn}
    if graph.num_relations > 1:
        losses["mra"] = mra_fn

    if bpr_events is not None:
        from .adaptation import fuse_relations

        train_items_per_user, ev_users, ev_items = bpr_events
        user_sets = [set(items.tolist()) for items in train_items_per_user]
        bpr_neg = NegativeSampler(
            np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x62676E])),
            graph.num_items,
            cfg.negative_tries,
            forbid_self=False,
        )
        bu = np.asarray(ev_users, dtype=np.int64)
        bi = np.asarray(ev_items, dtype=np.int64)
        bneg, ok = bpr_neg.sample(bu, user_sets)
        bu, bi, bneg = bu[ok], bi[ok], bneg[ok]
        uniq, inverse = np.unique(bu, return_inverse=True)
        flat_idx = np.concatenate([train_items_per_user[u] for u in uniq])
        offs = np.zeros(len(uniq) + 1, dtype=np.int64)
        for k, u in enumerate(uniq):
            offs[k + 1] = offs[k] + len(train_items_per_user[u])

        def bpr_fn():
            fused = fuse_relations(params.gate, embs())
            profiles = ad.group_mean_rows(fused, flat_idx, offs)
            e_u = ad.gather_rows(profiles, inverse)
            p_pos = ad.row_dot(e_u, ad.gather_rows(fused, bi))
            p_neg = ad.row_dot(e_u, ad.gather_rows(fused, bneg))
            return ad.neg(ad.tsum(ad.log(ad.clipped_sigmoid(ad.sub(p_pos, p_neg)))))

        losses["bpr"] = bpr_fn

    return losses


def relation_embedding_arrays(params: ParamSet, propagator: RelationPropagator) -> list:
    """Plain numpy E^r for every relation (no autograd graph)."""
    return [propagator.propagated[r] @ params.w[r].data for r in range(len(params.w))]


def validation_mrr(params, propagator, split: EdgeSplit, nbr_sets) -> float:
    """Held-out tail-prediction MRR on the validation edges, train-graph embeddings."""
    embs = relation_embedding_arrays(params, propagator)
    report = eval_knowledge_prediction(embs, split.valid, nbr_sets, topn=())
    if not report.cohorts:
        return float("nan")
    return report.get("overall").metrics["mrr"]


def history_tsv(history: list) -> str:
    cols = ["epoch", "kr", "fr", "hnr", "mra", "total", "valid_mrr"]
    lines = ["\t".join(cols)]
    for row in history:
        lines.append(
            "\t".join(
                str(row["epoch"]) if c == "epoch" else f"{row[c]:.10f}" for c in cols
            )
        )
    return "\n".join(lines) + "\n"
