"""Ranking metrics and the two evaluation protocols (link prediction, recommendation).

All rankings order by descending score with ascending item id breaking ties,
so every metric is deterministic for a given score vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Item ids from best to worst under (-score, id) ordering."""
    ids = np.arange(len(scores))
    return np.lexsort((ids, -scores))


def recall_at_n(scores: np.ndarray, relevant, n: int) -> float:
    relevant = set(int(r) for r in relevant)
    if not relevant:
        raise ValueError("recall undefined for an empty relevant set")
    top = rank_order(scores)[:n]
    hits = sum(1 for i in top if int(i) in relevant)
    return hits / len(relevant)


def ndcg_at_n(scores: np.ndarray, relevant, n: int) -> float:
    """Binary-gain NDCG: DCG over the top n, ideal DCG packs relevant items first."""
    relevant = set(int(r) for r in relevant)
    if not relevant:
        raise ValueError("ndcg undefined for an empty relevant set")
    top = rank_order(scores)[:n]
    dcg = sum(
        1.0 / np.log2(pos + 1.0)
        for pos, i in enumerate(top, start=1)
        if int(i) in relevant
    )
    ideal = sum(1.0 / np.log2(pos + 1.0) for pos in range(1, min(n, len(relevant)) + 1))
    return dcg / ideal


def mrr(scores: np.ndarray, relevant) -> float:
    """Untruncated reciprocal rank of the best-ranked relevant item."""
    relevant = set(int(r) for r in relevant)
    if not relevant:
        raise ValueError("mrr undefined for an empty relevant set")
    for pos, i in enumerate(rank_order(scores), start=1):
        if int(i) in relevant:
            return 1.0 / pos
    raise AssertionError("relevant item not found in ranking")


def single_target_rank(scores: np.ndarray, target: int, mask: np.ndarray) -> int:
    """1-indexed rank of ``target`` among items where mask is True, without sorting."""
    s = scores[target]
    cand = mask.copy()
    cand[target] = False
    higher = int(np.count_nonzero(scores[cand] > s))
    cand_ids = np.flatnonzero(cand)
    tied_before = int(np.count_nonzero((scores[cand_ids] == s) & (cand_ids < target)))
    return 1 + higher + tied_before


def random_rank_mrr(num_candidates: int) -> float:
    """Expected MRR of a uniformly random ranking with one relevant item: H_C / C."""
    return float(np.sum(1.0 / np.arange(1, num_candidates + 1)) / num_candidates)


@dataclass
class CohortResult:
    cohort: str
    num_cases: int
    metrics: dict


@dataclass
class EvalReport:
    task: str
    setting: str
    cohorts: list = field(default_factory=list)

    def add(self, cohort: str, num_cases: int, metrics: dict):
        self.cohorts.append(CohortResult(cohort, num_cases, dict(metrics)))

    def get(self, cohort: str) -> CohortResult:
        for c in self.cohorts:
            if c.cohort == cohort:
                return c
        raise KeyError(cohort)

    def to_tsv(self) -> str:
        names = sorted({k for c in self.cohorts for k in c.metrics})
        lines = ["\t".join(["task", "setting", "cohort", "num_cases"] + names)]
        for c in self.cohorts:
            row = [self.task, self.setting, c.cohort, str(c.num_cases)]
            row += [f"{c.metrics.get(k, float('nan')):.10f}" for k in names]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        names = sorted({k for c in self.cohorts for k in c.metrics})
        header = f"{'cohort':<12} {'cases':>7} " + " ".join(f"{n:>12}" for n in names)
        lines = [f"task={self.task} setting={self.setting}", header]
        for c in self.cohorts:
            vals = " ".join(f"{c.metrics.get(k, float('nan')):>12.6f}" for k in names)
            lines.append(f"{c.cohort:<12} {c.num_cases:>7} " + vals)
        return "\n".join(lines)


def _per_rank_metrics(ranks: np.ndarray, topn: list) -> dict:
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for n in topn:
        hit = ranks <= n
        out[f"recall@{n}"] = float(np.mean(hit))
        out[f"ndcg@{n}"] = float(np.mean(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)))
    return out


def eval_knowledge_prediction(
    embeddings: list,
    heldout: list,
    known_sets: list,
    zs_items=None,
    topn=(20,),
) -> EvalReport:
    """Tail prediction over held-out edges, one ranking per directed edge.

    For edge (h, t) under relation r the candidates are every item except h
    and except h's already-known neighbors under r (``known_sets``, symmetric,
    with t itself never filtered). Cohorts split by whether either endpoint is
    a zero-shot item.
    """
    n = embeddings[0].shape[0]
    zs = np.zeros(n, dtype=bool)
    if zs_items is not None and len(zs_items):
        zs[np.asarray(zs_items, dtype=np.int64)] = True

    all_ranks, zs_flags = [], []
    for r, edges in enumerate(heldout):
        emb = embeddings[r]
        for h, t in edges:
            h, t = int(h), int(t)
            mask = np.ones(n, dtype=bool)
            mask[h] = False
            filt = known_sets[r][h] - {t}
            if filt:
                mask[list(filt)] = False
            scores = emb @ emb[h]
            all_ranks.append(single_target_rank(scores, t, mask))
            zs_flags.append(zs[h] or zs[t])
    ranks = np.asarray(all_ranks, dtype=np.float64)
    flags = np.asarray(zs_flags, dtype=bool)

    report = EvalReport(task="kp", setting="all")
    if len(ranks):
        report.add("overall", len(ranks), _per_rank_metrics(ranks, list(topn)))
        if flags.any():
            report.add("zs", int(flags.sum()), _per_rank_metrics(ranks[flags], list(topn)))
        if (~flags).any():
            report.add("warm", int((~flags).sum()), _per_rank_metrics(ranks[~flags], list(topn)))
    return report


def eval_zsir(
    fused: np.ndarray,
    train_items_per_user: list,
    eval_items_per_user: list,
    setting: str = "all",
    zs_items=None,
    topn=(20,),
) -> EvalReport:
    """Per-user top-N recommendation; users without usable relevant items are skipped.

    setting "all" ranks every item the user has not already interacted with in
    train; "zs" restricts both candidates and relevant items to the zero-shot
    set. The user profile is the mean of train-item embeddings, so users with
    no train history are skipped too.
    """
    if setting not in ("all", "zs"):
        raise ValueError(f"unknown setting {setting!r}")
    n = fused.shape[0]
    zs_mask = np.zeros(n, dtype=bool)
    if zs_items is not None and len(zs_items):
        zs_mask[np.asarray(zs_items, dtype=np.int64)] = True

    topn = list(topn)
    sums = {m: 0.0 for m in ["mrr"] + [f"recall@{k}" for k in topn] + [f"ndcg@{k}" for k in topn]}
    users = 0
    for train_items, eval_items in zip(train_items_per_user, eval_items_per_user):
        if len(train_items) == 0:
            continue
        relevant = set(int(i) for i in eval_items)
        mask = np.ones(n, dtype=bool)
        mask[train_items] = False
        if setting == "zs":
            mask &= zs_mask
            relevant = {i for i in relevant if zs_mask[i]}
        else:
            relevant = {i for i in relevant if mask[i]}
        if not relevant:
            continue
        scores = ranking_scores_for_user(fused, train_items)
        scores = np.where(mask, scores, -np.inf)
        users += 1
        sums["mrr"] += mrr(scores, relevant)
        for k in topn:
            sums[f"recall@{k}"] += recall_at_n(scores, relevant, k)
            sums[f"ndcg@{k}"] += ndcg_at_n(scores, relevant, k)

    report = EvalReport(task="zsir", setting=setting)
    if users:
        report.add("users", users, {m: v / users for m, v in sums.items()})
    return report


def ranking_scores_for_user(fused: np.ndarray, train_items: np.ndarray) -> np.ndarray:
    from .interactions import ranking_score, user_embedding

    return ranking_score(user_embedding(train_items, fused), fused)
