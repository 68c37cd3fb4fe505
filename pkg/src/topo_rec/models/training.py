"""Model wrappers, Adam, early stopping and artifact persistence."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from ..errors import ConfigError, TrainingDiverged
from ..evaluation import (
    RankingResult,
    SplitDataset,
    items_by_user,
    merge_exclusions,
    ndcg_at_k,
    recall_at_k,
    top_k,
)
from ..graph import USER, ITEM, BipartiteGraph, project
from .losses import bpr_loss, l2_rows, log_sigmoid, svdgcn_partition_loss, ultragcn_aux, ultragcn_losses
from .propagation import backward_layers, dgcf_propagate, lightgcn_operators, run_layers, EmbeddingState
from .svdgcn import svdgcn_embed

log = logging.getLogger(__name__)

MODEL_KINDS = ("lightgcn", "dgcf", "ultragcn", "svdgcn")


@dataclass(frozen=True)
class TrainConfig:
    embedding_dim: int = 64
    layers: int = 3
    learning_rate: float = 0.005
    batch_size: int = 1024
    # negatives per positive for UltraGCN; BPR always draws one
    negatives: int = 1
    max_epochs: int = 200
    patience: int = 10
    reg: float = 1e-4
    k: int = 20
    seed: int = 0
    # DGCF
    intents: int = 4
    routing_iterations: int = 2
    # UltraGCN
    constraint_weight: float = 1.0
    item_weight: float = 1.0
    item_neighbors: int = 10
    # SVD-GCN
    rank: int = 64
    a1: float = 5.0
    a2: float = 1.0
    svd_trainable: bool = False
    partition_weight: float = 0.1

    def __post_init__(self):
        for name in ("embedding_dim", "batch_size", "negatives", "max_epochs", "patience", "k",
                     "intents", "item_neighbors", "rank"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.layers < 0 or self.routing_iterations < 0:
            raise ConfigError("layers and routing_iterations must be >= 0")
        if self.learning_rate < 0 or self.reg < 0:
            raise ConfigError("learning_rate and reg must be non-negative")

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(mapping) - known
        if extra:
            raise ConfigError(f"unknown training options: {sorted(extra)}")
        return cls(**dict(mapping))


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def init_embeddings(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    """Zero-mean uniform entries with half-width ``1/sqrt(dim)``."""
    h = 1.0 / np.sqrt(dim)
    return rng.uniform(-h, h, size=(rows, dim))


class NegativeSampler:
    """Uniform items outside each user's training set (rejection sampling)."""

    def __init__(self, train: np.ndarray, item_count: int):
        self.item_count = item_count
        self.keys = np.unique(train[:, 0].astype(np.int64) * item_count + train[:, 1])

    def _observed(self, users, items):
        k = users * self.item_count + items
        pos = np.searchsorted(self.keys, k)
        pos = np.minimum(pos, self.keys.size - 1)
        return self.keys[pos] == k

    def sample(self, users: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        users = np.repeat(np.asarray(users, dtype=np.int64)[:, None], n, axis=1)
        out = rng.integers(0, self.item_count, size=users.shape)
        bad = self._observed(users, out)
        for _ in range(100):
            if not bad.any():
                break
            out[bad] = rng.integers(0, self.item_count, size=int(bad.sum()))
            bad = self._observed(users, out)
        return out


class Recommender:
    """Common surface of the four models: parameters, embeddings, loss."""

    kind: str
    params: dict[str, np.ndarray]

    def embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def loss_and_grads(self, users, pos, neg, rng) -> tuple[float, dict[str, np.ndarray]]:
        raise NotImplementedError


class LightGCN(Recommender):
    kind = "lightgcn"

    def __init__(self, train_graph: BipartiteGraph, config: TrainConfig, rng: np.random.Generator):
        self.config = config
        self.graph = train_graph
        self.params = {
            "user": init_embeddings(rng, train_graph.user_count, config.embedding_dim),
            "item": init_embeddings(rng, train_graph.item_count, config.embedding_dim),
        }
        self.operators = lightgcn_operators(train_graph, config.layers)

    def _forward(self):
        return self.operators, run_layers(self.params["user"], self.params["item"], self.operators)[:2]

    def embeddings(self):
        return self._forward()[1]

    def loss_and_grads(self, users, pos, neg, rng):
        ops, (fu, fi) = self._forward()
        loss, gu, gi = bpr_loss(fu, fi, users, pos, neg[:, 0])
        gu0, gi0 = backward_layers(gu, gi, ops)
        B = len(users)
        lu, ru = l2_rows(self.params["user"], users, self.config.reg)
        li, ri = l2_rows(self.params["item"], np.concatenate([pos, neg[:, 0]]), self.config.reg)
        return loss + (lu + li) / B, {"user": gu0 + ru / B, "item": gi0 + ri / B}


class DGCF(LightGCN):
    """LightGCN with intent-routed edge weights.

    Routing weights are recomputed on every forward pass and treated as
    constants when differentiating.
    """

    kind = "dgcf"

    def __init__(self, train_graph, config, rng):
        if config.embedding_dim % config.intents:
            raise ConfigError("embedding_dim must be divisible by intents")
        super().__init__(train_graph, config, rng)

    def _forward(self):
        state = EmbeddingState(self.params["user"], self.params["item"])
        out, dstate = dgcf_propagate(state, self.graph, self.config.layers,
                                     self.config.intents, self.config.routing_iterations)
        return dstate.operators, (out.user_embeddings, out.item_embeddings)


class UltraGCN(Recommender):
    kind = "ultragcn"

    def __init__(self, train_graph, config, rng):
        self.config = config
        self.params = {
            "user": init_embeddings(rng, train_graph.user_count, config.embedding_dim),
            "item": init_embeddings(rng, train_graph.item_count, config.embedding_dim),
        }
        self.aux = ultragcn_aux(train_graph, config.item_neighbors)
        if self.aux.skipped_items:
            log.debug("ultragcn: %d items without co-occurring items skipped in the item loss",
                      len(self.aux.skipped_items))

    def embeddings(self):
        return self.params["user"], self.params["item"]

    def loss_and_grads(self, users, pos, neg, rng):
        c = self.config
        loss, gu, gi = ultragcn_losses(self.params["user"], self.params["item"], users, pos, neg,
                                       self.aux, c.constraint_weight, c.item_weight, c.reg)
        return loss, {"user": gu, "item": gi}


def _random_neighbors(adj: sp.csr_matrix, nodes: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    deg = np.diff(adj.indptr)[nodes]
    ok = deg > 0
    offs = (rng.random(nodes.size) * np.maximum(deg, 1)).astype(np.int64)
    nb = adj.indices[np.minimum(adj.indptr[nodes] + offs, adj.indices.size - 1)] if adj.nnz else np.zeros_like(nodes)
    return nodes[ok], nb[ok]


class SVDGCN(Recommender):
    """Spectral embeddings; optionally a trainable square transform ``W``."""

    kind = "svdgcn"

    def __init__(self, train_graph, config, rng):
        self.config = config
        self.state, _ = svdgcn_embed(train_graph, config.rank, config.a1, config.a2, seed=config.seed)
        self.pu = self.state.spectral_user()
        self.qi = self.state.spectral_item()
        k = self.pu.shape[1]
        self.params = {"weight": np.eye(k)} if config.svd_trainable else {}
        if config.svd_trainable:
            self.user_co = project(train_graph, USER).weighted_adjacency
            self.item_co = project(train_graph, ITEM).weighted_adjacency
            self.user_count = train_graph.user_count
            self.item_count = train_graph.item_count

    def embeddings(self):
        if "weight" in self.params:
            W = self.params["weight"]
            return self.pu @ W, self.qi @ W
        return self.pu, self.qi

    def loss_and_grads(self, users, pos, neg, rng):
        if "weight" not in self.params:
            return 0.0, {}
        W = self.params["weight"]
        eu, ei = self.pu @ W, self.qi @ W
        B = len(users)
        n0 = neg[:, 0]
        sp_ = np.einsum("bd,bd->b", eu[users], ei[pos])
        sn = np.einsum("bd,bd->b", eu[users], ei[n0])
        loss = -(log_sigmoid(sp_).sum() + log_sigmoid(-sn).sum())
        gu = np.zeros_like(eu)
        gi = np.zeros_like(ei)
        dp, dn = -expit(-sp_), expit(sn)
        np.add.at(gu, users, dp[:, None] * ei[pos] + dn[:, None] * ei[n0])
        np.add.at(gi, pos, dp[:, None] * eu[users])
        np.add.at(gi, n0, dn[:, None] * eu[users])

        mu = self.config.partition_weight
        if mu:
            v, w = _random_neighbors(self.user_co, np.asarray(users), rng)
            j = rng.integers(0, self.user_count, size=v.size)
            lu, g = svdgcn_partition_loss(eu, np.column_stack([v, w]), np.column_stack([v, j]))
            loss += mu * lu
            gu += mu * g
            v, w = _random_neighbors(self.item_co, np.asarray(pos), rng)
            j = rng.integers(0, self.item_count, size=v.size)
            li, g = svdgcn_partition_loss(ei, np.column_stack([v, w]), np.column_stack([v, j]))
            loss += mu * li
            gi += mu * g
        gW = (self.pu.T @ gu + self.qi.T @ gi) / B
        reg = self.config.reg
        loss = loss / B + 0.5 * reg * float((W * W).sum())
        return float(loss), {"weight": gW + reg * W}


MODELS = {m.kind: m for m in (LightGCN, DGCF, UltraGCN, SVDGCN)}


def build_model(kind: str, train_graph: BipartiteGraph, config: TrainConfig, rng) -> Recommender:
    try:
        cls = MODELS[kind]
    except KeyError:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}") from None
    return cls(train_graph, config, rng)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_metric: Optional[float]


@dataclass
class StoppingResult:
    trace: list[EpochRecord]
    best_epoch: int
    best_metric: Optional[float]
    best_snapshot: object


def early_stopping(
    run_epoch: Callable[[int], float],
    validate: Callable[[], Optional[float]],
    snapshot: Callable[[], object],
    max_epochs: int,
    patience: int,
) -> StoppingResult:
    """Run epochs until the validation metric fails to improve (strictly)
    for ``patience`` consecutive epochs; keep the best snapshot."""
    trace: list[EpochRecord] = []
    best_metric: Optional[float] = None
    best_epoch = 0
    best = snapshot()
    stale = 0
    for epoch in range(1, max_epochs + 1):
        loss = run_epoch(epoch)
        if not np.isfinite(loss):
            raise TrainingDiverged(epoch)
        metric = validate()
        trace.append(EpochRecord(epoch, float(loss), metric))
        if metric is None:
            best, best_epoch = snapshot(), epoch
            continue
        if best_metric is None or metric > best_metric:
            best_metric, best_epoch, best = metric, epoch, snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return StoppingResult(trace, best_epoch, best_metric, best)


@dataclass
class TrainedModel:
    kind: str
    config: TrainConfig
    user_embeddings: np.ndarray
    item_embeddings: np.ndarray
    trace: list[EpochRecord]
    best_epoch: int
    best_validation: Optional[float]
    train_items: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def epochs_run(self) -> int:
        return len(self.trace)

    def score_all(self, user: int) -> np.ndarray:
        """Inner-product scores for every item; training items set to ``-inf``."""
        scores = self.item_embeddings @ self.user_embeddings[user]
        banned = self.train_items.get(int(user))
        if banned is not None:
            scores[banned] = -np.inf
        return scores

    def rank(self, users, exclude: Mapping[int, np.ndarray], k: int) -> RankingResult:
        users = list(users)
        scores = self.user_embeddings[users] @ self.item_embeddings.T
        return top_k(scores, exclude, k, users)

    def evaluate(self, split_data: SplitDataset, k: Optional[int] = None) -> dict[str, float]:
        """Test Recall@k and nDCG@k; training and validation items are masked."""
        k = k or self.config.k
        exclude = merge_exclusions(self.train_items, items_by_user(split_data.validation))
        users = sorted(items_by_user(split_data.test))
        ranking = self.rank(users, exclude, k)
        return {"recall": recall_at_k(ranking, split_data.test, k),
                "ndcg": ndcg_at_k(ranking, split_data.test, k)}


def validation_recall(model: Recommender, split_data: SplitDataset, train_items, k: int) -> Optional[float]:
    if len(split_data.validation) == 0:
        return None
    fu, fi = model.embeddings()
    users = sorted(items_by_user(split_data.validation))
    ranking = top_k(fu[users] @ fi.T, train_items, k, users)
    return recall_at_k(ranking, split_data.validation, k)


def train(kind: str, split_data: SplitDataset, config: TrainConfig) -> TrainedModel:
    """Fit one model with mini-batch Adam and validation Recall@k early stopping."""
    rng = np.random.default_rng(config.seed)
    train_graph = split_data.train_graph()
    model = build_model(kind, train_graph, config, rng)
    opt = Adam(model.params, config.learning_rate)
    sampler = NegativeSampler(split_data.train, train_graph.item_count)
    train_items = items_by_user(split_data.train)
    positives = split_data.train
    n_neg = config.negatives if kind == "ultragcn" else 1

    def run_epoch(epoch: int) -> float:
        if not model.params:
            return 0.0
        order = rng.permutation(len(positives))
        total, batches = 0.0, 0
        for start in range(0, order.size, config.batch_size):
            batch = positives[order[start:start + config.batch_size]]
            users, pos = batch[:, 0], batch[:, 1]
            neg = sampler.sample(users, n_neg, rng)
            loss, grads = model.loss_and_grads(users, pos, neg, rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            opt.step(model.params, grads)
            total += loss
            batches += 1
        return total / max(batches, 1)

    def snapshot():
        return {k: v.copy() for k, v in model.params.items()}

    result = early_stopping(
        run_epoch,
        lambda: validation_recall(model, split_data, train_items, config.k),
        snapshot,
        config.max_epochs,
        config.patience,
    )
    model.params.update(result.best_snapshot)
    fu, fi = model.embeddings()
    if not (np.all(np.isfinite(fu)) and np.all(np.isfinite(fi))):
        raise TrainingDiverged(result.best_epoch, "non-finite embeddings in best snapshot")
    return TrainedModel(kind, config, np.array(fu), np.array(fi), result.trace,
                        result.best_epoch, result.best_metric, train_items)


def save_trained(model: TrainedModel, directory: str | Path) -> None:
    """Embedding dump (``embeddings.npz``), ``manifest.json`` and ``trace.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savez(d / "embeddings.npz", user=model.user_embeddings, item=model.item_embeddings)
    manifest = {
        "model_kind": model.kind,
        "config": asdict(model.config),
        "epochs_run": model.epochs_run,
        "best_epoch": model.best_epoch,
        "best_validation_recall": model.best_validation,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(d / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", f"val_recall@{model.config.k}"])
        for r in model.trace:
            w.writerow([r.epoch, repr(r.loss), "" if r.val_metric is None else repr(r.val_metric)])


def load_trained(directory: str | Path, split_data: Optional[SplitDataset] = None) -> TrainedModel:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    emb = np.load(d / "embeddings.npz")
    trace = []
    with open(d / "trace.csv", newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        next(rows)
        for ep, loss, val in rows:
            trace.append(EpochRecord(int(ep), float(loss), float(val) if val else None))
    train_items = items_by_user(split_data.train) if split_data is not None else {}
    return TrainedModel(manifest["model_kind"], TrainConfig(**manifest["config"]), emb["user"], emb["item"],
                        trace, manifest["best_epoch"], manifest["best_validation_recall"], train_items)
