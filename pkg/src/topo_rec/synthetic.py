"""Seeded synthetic interaction data for fixtures, tests and demos."""

from __future__ import annotations

import numpy as np

from .graph import BipartiteGraph


def block_interactions(
    users: int = 200,
    items: int = 100,
    blocks: int = 4,
    p_in: float = 0.3,
    p_out: float = 0.01,
    seed: int = 0,
) -> BipartiteGraph:
    """Users and items split into ``blocks`` communities; in-block edges with
    probability ``p_in``, cross-block with ``p_out``. Every user keeps at
    least one edge."""
    rng = np.random.default_rng(seed)
    ub = np.arange(users) * blocks // users
    ib = np.arange(items) * blocks // items
    same = ub[:, None] == ib[None, :]
    R = rng.random((users, items)) < np.where(same, p_in, p_out)
    for u in np.flatnonzero(~R.any(axis=1)):
        R[u, rng.choice(np.flatnonzero(same[u]))] = True
    uu, ii = np.nonzero(R)
    return BipartiteGraph.from_edges(uu, ii, users, items)


def power_law_interactions(
    users: int,
    items: int,
    edges: int,
    user_exponent: float = 2.2,
    item_exponent: float = 2.0,
    seed: int = 0,
) -> BipartiteGraph:
    """Chung-Lu style bipartite graph with heavy-tailed expected degrees.

    Draws ``edges`` distinct pairs with endpoint probabilities proportional
    to Pareto-distributed node weights.
    """
    rng = np.random.default_rng(seed)
    if edges > users * items:
        raise ValueError("more edges requested than possible pairs")
    wu = (1.0 - rng.random(users)) ** (-1.0 / (user_exponent - 1.0))
    wi = (1.0 - rng.random(items)) ** (-1.0 / (item_exponent - 1.0))
    pu, pi = wu / wu.sum(), wi / wi.sum()
    keys = np.empty(0, dtype=np.int64)
    while keys.size < edges:
        need = edges - keys.size
        u = rng.choice(users, size=2 * need, p=pu)
        i = rng.choice(items, size=2 * need, p=pi)
        new = u.astype(np.int64) * items + i
        _, first = np.unique(new, return_index=True)
        new = new[np.sort(first)]
        new = new[~np.isin(new, keys)]
        keys = np.concatenate([keys, new[:need]])
    uu, ii = np.divmod(keys, items)
    return BipartiteGraph.from_edges(uu, ii, users, items)


def random_bipartite(rng: np.random.Generator, max_users: int = 30, max_items: int = 30,
                     density: float | None = None) -> BipartiteGraph:
    """Erdős–Rényi style bipartite graph with random size and density."""
    U = int(rng.integers(1, max_users + 1))
    I = int(rng.integers(1, max_items + 1))
    p = rng.uniform(0.05, 0.6) if density is None else density
    R = rng.random((U, I)) < p
    if not R.any():
        R[rng.integers(U), rng.integers(I)] = True
    uu, ii = np.nonzero(R)
    return BipartiteGraph.from_edges(uu, ii, U, I)


def synthetic_records(
    rng: np.random.Generator,
    count: int,
    coefficients: dict[str, float] | None = None,
    intercept: float = 0.3,
    noise: float = 0.0,
    strategy: str = "node_dropout",
    model_kind: str = "lightgcn",
    metric: str = "recall@20",
    first_id: int = 0,
):
    """Regression rows with Gaussian characteristics and a linear target.

    ``y = intercept + sum(coefficients[c] * x_c) + N(0, noise^2)``; every
    characteristic not named in ``coefficients`` is a null predictor.
    """
    from .characteristics import CHARACTERISTIC_NAMES, CharacteristicsVector
    from .explainer import SampleRecord
    from .sampler import SamplingSpec, Strategy

    coefficients = coefficients or {}
    unknown = set(coefficients) - set(CHARACTERISTIC_NAMES)
    if unknown:
        raise ValueError(f"unknown characteristics: {sorted(unknown)}")
    X = rng.standard_normal((count, len(CHARACTERISTIC_NAMES)))
    beta = np.array([coefficients.get(n, 0.0) for n in CHARACTERISTIC_NAMES])
    y = intercept + X @ beta
    if noise:
        y = y + noise * rng.standard_normal(count)
    sizes = rng.integers(50, 500, size=(count, 3))
    out = []
    for r in range(count):
        sid = first_id + r
        spec = SamplingSpec(Strategy(strategy), float(rng.uniform(0.7, 0.9)), sid, sid)
        out.append(SampleRecord(
            sid, spec, CharacteristicsVector(*X[r].tolist()),
            int(sizes[r, 0]), int(sizes[r, 1]), int(sizes[r, 2]),
            {model_kind: {metric: float(y[r])}},
        ))
    return out
