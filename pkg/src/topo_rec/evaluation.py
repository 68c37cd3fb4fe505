"""Train/validation/test splitting and top-K ranking metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import MetricUndefined, SplitInfeasible
from .graph import BipartiteGraph, induced_subgraph
from .sampler import floor_count

MIN_SPLIT_EDGES = 10


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """Disjoint edge partition of ``parent``; each part is an ``(k, 2)`` index array."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    parent: BipartiteGraph
    # users whose held-out edges were folded back into train
    reassigned_users: tuple[int, ...] = ()

    def train_graph(self) -> BipartiteGraph:
        """Training edges over the full node set of the parent (isolated nodes kept)."""
        return induced_subgraph(self.parent, self.train, drop_isolated=False)

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def split(
    graph: BipartiteGraph,
    rng: np.random.Generator,
    test_ratio: float = 0.2,
    val_ratio: float = 0.1,
) -> SplitDataset:
    """Uniform edge-level split: ``test_ratio`` of the edges go to test, then
    ``val_ratio`` of the remainder to validation.

    A user left without training edges gets all of their held-out edges
    moved back to train; such users drop out of evaluation.
    """
    E = graph.edge_count
    if E < MIN_SPLIT_EDGES:
        raise SplitInfeasible(f"need at least {MIN_SPLIT_EDGES} edges to split, got {E}")
    if not (0.0 <= test_ratio < 1.0 and 0.0 <= val_ratio < 1.0):
        raise SplitInfeasible("ratios must lie in [0, 1)")
    perm = rng.permutation(E)
    n_test = floor_count(test_ratio, E)
    n_val = floor_count(val_ratio, E - n_test)
    part = np.zeros(E, dtype=np.int8)  # 0 train, 1 val, 2 test
    part[perm[:n_test]] = 2
    part[perm[n_test:n_test + n_val]] = 1

    users = graph.users
    has_train = np.zeros(graph.user_count, dtype=bool)
    has_train[users[part == 0]] = True
    orphan = ~has_train[users]
    reassigned = tuple(np.unique(users[orphan]).tolist())
    part[orphan] = 0
    return SplitDataset(
        train=graph.edges[part == 0],
        validation=graph.edges[part == 1],
        test=graph.edges[part == 2],
        parent=graph,
        reassigned_users=reassigned,
    )


def items_by_user(edges: np.ndarray) -> dict[int, np.ndarray]:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.shape[0] == 0:
        return {}
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    e = edges[order]
    users, starts = np.unique(e[:, 0], return_index=True)
    chunks = np.split(e[:, 1], starts[1:])
    return {int(u): c for u, c in zip(users.tolist(), chunks)}


@dataclass(frozen=True)
class RankingResult:
    """Per-user top-K item lists (best first)."""

    lists: Mapping[int, np.ndarray]
    k: int = 20

    def __getitem__(self, user: int) -> np.ndarray:
        return self.lists.get(user, np.empty(0, dtype=np.int64))


def top_k(scores: np.ndarray, exclude: Mapping[int, np.ndarray], k: int, users: Iterable[int]) -> RankingResult:
    """Rank rows of ``scores`` (one row per user id in ``users``).

    Excluded items are never returned; ties keep ascending item order.
    """
    lists = {}
    for row, u in enumerate(users):
        s = np.array(scores[row], dtype=np.float64, copy=True)
        banned = exclude.get(u)
        if banned is not None and len(banned):
            s[banned] = -np.inf
        order = np.argsort(-s, kind="stable")[:k]
        lists[int(u)] = order[np.isfinite(s[order])]
    return RankingResult(lists, k)


def _per_user_metric(ranking: RankingResult, test: np.ndarray, k: int, fn) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    truth = items_by_user(test)
    if not truth:
        raise MetricUndefined("no user has held-out items")
    vals = [fn(ranking[u][:k], set(items.tolist()), k) for u, items in sorted(truth.items())]
    return math.fsum(vals) / len(vals)


def _recall(ranked, relevant, k):
    hits = sum(1 for i in ranked.tolist() if i in relevant)
    return hits / len(relevant)


def _ndcg(ranked, relevant, k):
    dcg = math.fsum(1.0 / math.log2(r + 2) for r, i in enumerate(ranked.tolist()) if i in relevant)
    idcg = math.fsum(1.0 / math.log2(r + 2) for r in range(min(len(relevant), k)))
    return dcg / idcg


def recall_at_k(ranking: RankingResult, test: np.ndarray, k: int = 20) -> float:
    """Mean over users with held-out items of ``|top-k ∩ test_u| / |test_u|``."""
    return _per_user_metric(ranking, test, k, _recall)


def ndcg_at_k(ranking: RankingResult, test: np.ndarray, k: int = 20) -> float:
    """Binary-gain nDCG@k averaged over users with held-out items."""
    return _per_user_metric(ranking, test, k, _ndcg)


METRICS = {"recall": recall_at_k, "ndcg": ndcg_at_k}


def random_ranking(
    item_count: int,
    users: Iterable[int],
    exclude: Mapping[int, np.ndarray],
    k: int,
    rng: np.random.Generator,
) -> RankingResult:
    lists = {}
    for u in users:
        allowed = np.ones(item_count, dtype=bool)
        banned = exclude.get(u)
        if banned is not None:
            allowed[banned] = False
        cand = np.flatnonzero(allowed)
        lists[int(u)] = rng.permutation(cand)[:k]
    return RankingResult(lists, k)


def random_baseline(
    split_data: SplitDataset, k: int = 20, shuffles: int = 100, seed: int = 0
) -> float:
    """Expected test Recall@k of a ranker that shuffles the non-train items."""
    exclude = merge_exclusions(items_by_user(split_data.train), items_by_user(split_data.validation))
    users = sorted(items_by_user(split_data.test))
    rng = np.random.default_rng(seed)
    vals = [
        recall_at_k(random_ranking(split_data.parent.item_count, users, exclude, k, rng), split_data.test, k)
        for _ in range(shuffles)
    ]
    return math.fsum(vals) / len(vals)


def merge_exclusions(*maps: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
    out: dict[int, list] = {}
    for m in maps:
        for u, items in m.items():
            out.setdefault(u, []).append(np.asarray(items, dtype=np.int64))
    return {u: np.unique(np.concatenate(parts)) for u, parts in out.items()}
