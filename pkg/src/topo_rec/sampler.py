"""Sub-dataset generation by node- and edge-dropout."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, DegenerateSample, EmptyDataset, SamplingExhausted
from .graph import BipartiteGraph, induced_subgraph, largest_connected_component

log = logging.getLogger(__name__)

# tags keep the seed-derivation streams apart
_ATTEMPT_TAG = 1
_STRATEGY_TAG = 2
_MIX_TAG = 3


class Strategy(str, Enum):
    NODE = "node_dropout"
    EDGE = "edge_dropout"


def derive_seed(*keys: int) -> int:
    """64-bit seed from a tuple of non-negative integers (counter-based split)."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def floor_count(fraction: float, n: int) -> int:
    """``floor(fraction * n)`` that tolerates binary round-off (0.7 * 10 -> 7)."""
    return int(math.floor(fraction * n + 1e-9))


@dataclass(frozen=True)
class SamplingSpec:
    strategy: Strategy
    dropout_rate: float
    seed: int
    sample_id: int
    retries: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SamplingSpec":
        return cls(Strategy(d["strategy"]), float(d["dropout_rate"]), int(d["seed"]),
                   int(d["sample_id"]), int(d.get("retries", 0)))


@dataclass(frozen=True)
class Floors:
    min_users: int = 1
    min_items: int = 1
    min_edges: int = 1

    def check(self, graph: BipartiteGraph) -> None:
        if (graph.user_count < self.min_users or graph.item_count < self.min_items
                or graph.edge_count < self.min_edges):
            raise DegenerateSample(
                f"sample {graph!r} below floors (users>={self.min_users}, "
                f"items>={self.min_items}, edges>={self.min_edges})"
            )


@dataclass(frozen=True)
class GenerationConfig:
    sample_count: int = 600
    rate_range: tuple[float, float] = (0.7, 0.9)
    # "uniform" (fair coin per sample) or alpha = fraction of edge-dropout samples
    strategy_mix: Union[float, str] = "uniform"
    master_seed: int = 0
    min_users: int = 50
    min_items: int = 50
    min_edges: int = 500
    max_retries: int = 1000

    def __post_init__(self):
        lo, hi = self.rate_range
        object.__setattr__(self, "rate_range", (float(lo), float(hi)))
        if self.sample_count < 1:
            raise ConfigError("sample_count must be >= 1")
        if not 0.0 <= lo <= hi < 1.0:
            raise ConfigError("rate_range must satisfy 0 <= low <= high < 1")
        if isinstance(self.strategy_mix, str):
            if self.strategy_mix != "uniform":
                raise ConfigError("strategy_mix must be 'uniform' or a number in [0, 1]")
        elif not 0.0 <= float(self.strategy_mix) <= 1.0:
            raise ConfigError("strategy_mix alpha must lie in [0, 1]")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be non-negative")

    @property
    def floors(self) -> Floors:
        return Floors(self.min_users, self.min_items, self.min_edges)


def drop_nodes(graph: BipartiteGraph, rate: float, rng: np.random.Generator) -> BipartiteGraph:
    """Remove ``floor(rate * (U + I))`` pooled nodes and their edges; no component step."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    n_nodes = graph.user_count + graph.item_count
    removed = rng.choice(n_nodes, size=floor_count(rate, n_nodes), replace=False)
    alive = np.ones(n_nodes, dtype=bool)
    alive[removed] = False
    mask = alive[graph.users] & alive[graph.items + graph.user_count]
    return induced_subgraph(graph, graph.edges[mask])


def drop_edges(graph: BipartiteGraph, rate: float, rng: np.random.Generator) -> BipartiteGraph:
    """Remove ``floor(rate * E)`` edges and the nodes left isolated; no component step."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    removed = rng.choice(graph.edge_count, size=floor_count(rate, graph.edge_count), replace=False)
    keep = np.ones(graph.edge_count, dtype=bool)
    keep[removed] = False
    return induced_subgraph(graph, graph.edges[keep])


def _finish(sub: BipartiteGraph, floors: Optional[Floors]) -> BipartiteGraph:
    if sub.edge_count == 0:
        raise DegenerateSample("no edges survived dropout")
    try:
        out = largest_connected_component(sub)
    except EmptyDataset as exc:
        raise DegenerateSample(str(exc)) from exc
    (floors or Floors()).check(out)
    return out


def node_dropout(graph, rate, rng, floors: Optional[Floors] = None) -> BipartiteGraph:
    return _finish(drop_nodes(graph, rate, rng), floors)


def edge_dropout(graph, rate, rng, floors: Optional[Floors] = None) -> BipartiteGraph:
    return _finish(drop_edges(graph, rate, rng), floors)


DROPOUTS = {Strategy.NODE: node_dropout, Strategy.EDGE: edge_dropout}


def assign_strategies(config: GenerationConfig) -> list[Strategy]:
    """Strategy per sample id.

    Under the uniform mix every sample flips its own fair coin; with a
    numeric alpha exactly ``M - floor((1 - alpha) * M)`` samples, chosen by a
    seeded permutation, use edge-dropout.
    """
    M = config.sample_count
    if config.strategy_mix == "uniform":
        out = []
        for sid in range(M):
            rng = np.random.default_rng(derive_seed(config.master_seed, sid, _STRATEGY_TAG))
            out.append(Strategy.EDGE if rng.random() < 0.5 else Strategy.NODE)
        return out
    n_edge = M - floor_count(1.0 - float(config.strategy_mix), M)
    order = np.random.default_rng(derive_seed(config.master_seed, _MIX_TAG)).permutation(M)
    out = [Strategy.NODE] * M
    for sid in order[:n_edge].tolist():
        out[sid] = Strategy.EDGE
    return out


def draw_sample(
    graph: BipartiteGraph, config: GenerationConfig, sample_id: int, strategy: Strategy
) -> tuple[SamplingSpec, BipartiteGraph]:
    """One accepted sample; each retry re-derives its rng from the retry counter.

    The stored seed alone reproduces the sample: ``rng = default_rng(seed)``,
    draw the rate, then apply the dropout with the same ``rng``.
    """
    lo, hi = config.rate_range
    floors = config.floors
    for retry in range(config.max_retries + 1):
        seed = derive_seed(config.master_seed, sample_id, _ATTEMPT_TAG, retry)
        rng = np.random.default_rng(seed)
        rate = float(rng.uniform(lo, hi))
        try:
            sub = DROPOUTS[strategy](graph, rate, rng, floors)
        except DegenerateSample:
            continue
        if retry:
            log.debug("sample %d accepted after %d retries", sample_id, retry)
        return SamplingSpec(strategy, rate, seed, sample_id, retry), sub
    raise SamplingExhausted(
        f"sample {sample_id}: more than {config.max_retries} consecutive degenerate draws"
    )


def replay_sample(graph: BipartiteGraph, spec: SamplingSpec) -> BipartiteGraph:
    """Rebuild a sample from its spec (floors are not re-checked)."""
    rng = np.random.default_rng(spec.seed)
    rng.uniform(0.0, 1.0)  # keep the stream aligned with draw_sample
    return DROPOUTS[spec.strategy](graph, spec.dropout_rate, rng)


def _draw_star(args):
    return draw_sample(*args)


def generate_samples(
    graph: BipartiteGraph, config: GenerationConfig, workers: int = 1
) -> list[tuple[SamplingSpec, BipartiteGraph]]:
    strategies = assign_strategies(config)
    tasks = [(graph, config, sid, s) for sid, s in enumerate(strategies)]
    if workers <= 1:
        return [draw_sample(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_draw_star, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
