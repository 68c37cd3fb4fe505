"""Degree-normalized message passing over the user-item graph.

LightGCN and DGCF share one propagation kernel: a layer maps
``(e_u, e_i) -> (Ŕ e_i, Ŕᵀ e_u)`` where ``Ŕ`` holds the edge weights divided
by ``sqrt(deg_u * deg_i)``. DGCF runs the kernel per intent, on its own
slice of the embedding columns and its own edge weights. Because the full
``(U+I) x (U+I)`` operator is symmetric, the backward pass reuses the same
kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigError, ShapeError
from ..graph import BipartiteGraph


@dataclass
class EmbeddingState:
    user_embeddings: np.ndarray
    item_embeddings: np.ndarray
    layer_outputs: Optional[list[tuple[np.ndarray, np.ndarray]]] = None

    @property
    def dim(self) -> int:
        return int(self.user_embeddings.shape[1])


@dataclass(frozen=True)
class LayerOperator:
    """One propagation layer: a normalized ``U x I`` matrix per intent."""

    blocks: tuple[sp.csr_matrix, ...]
    blocks_t: tuple[sp.csr_matrix, ...]

    @property
    def intents(self) -> int:
        return len(self.blocks)

    def apply(self, eu: np.ndarray, ei: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        K = self.intents
        d = eu.shape[1] // K
        out_u = np.empty_like(eu)
        out_i = np.empty_like(ei)
        for c in range(K):
            sl = slice(c * d, (c + 1) * d)
            out_u[:, sl] = self.blocks[c] @ ei[:, sl]
            out_i[:, sl] = self.blocks_t[c] @ eu[:, sl]
        return out_u, out_i


def normalized_block(graph: BipartiteGraph, weights: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """``w_ui / sqrt(deg_u * deg_i)`` with weighted degrees, as CSR and its transpose."""
    U, I = graph.user_count, graph.item_count
    deg_u = np.bincount(graph.users, weights=weights, minlength=U)
    deg_i = np.bincount(graph.items, weights=weights, minlength=I)
    norm = weights / np.sqrt(deg_u[graph.users] * deg_i[graph.items])
    block = sp.csr_matrix((norm, (graph.users, graph.items)), shape=(U, I))
    return block, block.T.tocsr()


def layer_operator(graph: BipartiteGraph, intent_weights: np.ndarray) -> LayerOperator:
    """Operator for an ``(E, K)`` matrix of per-intent edge weights."""
    w = np.asarray(intent_weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    if w.shape[0] != graph.edge_count:
        raise ShapeError("one weight row per edge is required")
    pairs = [normalized_block(graph, np.ascontiguousarray(w[:, c])) for c in range(w.shape[1])]
    return LayerOperator(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))


def _check_dims(state: EmbeddingState, graph: BipartiteGraph) -> None:
    eu, ei = state.user_embeddings, state.item_embeddings
    if eu.ndim != 2 or ei.ndim != 2 or eu.shape[1] != ei.shape[1]:
        raise ShapeError("embeddings must be 2-d with a shared width")
    if eu.shape[0] != graph.user_count or ei.shape[0] != graph.item_count:
        raise ShapeError(
            f"embedding rows ({eu.shape[0]}, {ei.shape[0]}) do not match graph "
            f"({graph.user_count}, {graph.item_count})"
        )


def run_layers(
    eu: np.ndarray, ei: np.ndarray, operators: list[LayerOperator]
) -> tuple[np.ndarray, np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Propagate through ``operators`` and return the layer mean plus every layer."""
    layers = [(eu, ei)]
    for op in operators:
        layers.append(op.apply(*layers[-1]))
    n = len(layers)
    fu = sum(l[0] for l in layers) / n
    fi = sum(l[1] for l in layers) / n
    return fu, fi, layers


def backward_layers(
    grad_u: np.ndarray, grad_i: np.ndarray, operators: list[LayerOperator]
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient w.r.t. layer-0 embeddings given the gradient of the layer mean."""
    n = len(operators) + 1
    gu, gi = grad_u / n, grad_i / n
    acc_u, acc_i = gu, gi
    for op in reversed(operators):
        pu, pi = op.apply(acc_u, acc_i)
        acc_u, acc_i = gu + pu, gi + pi
    return acc_u, acc_i


def lightgcn_operators(graph: BipartiteGraph, layers: int) -> list[LayerOperator]:
    op = layer_operator(graph, np.ones(graph.edge_count))
    return [op] * layers


def lightgcn_propagate(state: EmbeddingState, graph: BipartiteGraph, layers: int) -> EmbeddingState:
    _check_dims(state, graph)
    fu, fi, outs = run_layers(state.user_embeddings, state.item_embeddings,
                              lightgcn_operators(graph, layers))
    return EmbeddingState(fu, fi, outs)


@dataclass
class DgcfState:
    intent_count: int
    # routing logits, one column per intent
    scores: np.ndarray
    # softmax of the logits used by the last layer
    intent_weights: np.ndarray
    operators: list[LayerOperator] = field(default_factory=list)


def intent_softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def dgcf_propagate(
    state: EmbeddingState,
    graph: BipartiteGraph,
    layers: int,
    intent_count: int,
    routing_iterations: int,
    initial_scores: Optional[np.ndarray] = None,
) -> tuple[EmbeddingState, DgcfState]:
    """Disentangled propagation with iterative intent routing.

    Each layer runs ``routing_iterations`` rounds of: weights = softmax of the
    logits, aggregate user chunks with those weights, then raise every edge's
    logit by ``tanh(<aggregated user chunk, input item chunk>)``. The layer
    output uses the weights after the final round. Logits start at zero
    (uniform weights) and carry over between layers.
    """
    _check_dims(state, graph)
    if intent_count < 1 or state.dim % intent_count:
        raise ConfigError(f"embedding width {state.dim} not divisible into {intent_count} intents")
    K = intent_count
    d = state.dim // K
    E = graph.edge_count
    S = np.zeros((E, K)) if initial_scores is None else np.array(initial_scores, dtype=np.float64)
    if S.shape != (E, K):
        raise ShapeError("initial_scores must have shape (E, intent_count)")
    u_idx, i_idx = graph.users, graph.items

    eu, ei = state.user_embeddings, state.item_embeddings
    operators = []
    for _ in range(layers):
        for _ in range(routing_iterations):
            agg_u, _ = layer_operator(graph, intent_softmax(S)).apply(eu, ei)
            dots = (agg_u[u_idx] * ei[i_idx]).reshape(E, K, d).sum(axis=2)
            S = S + np.tanh(dots)
        op = layer_operator(graph, intent_softmax(S))
        operators.append(op)
        eu, ei = op.apply(eu, ei)
    fu, fi, outs = run_layers(state.user_embeddings, state.item_embeddings, operators)
    weights = intent_softmax(S)
    return EmbeddingState(fu, fi, outs), DgcfState(K, S, weights, operators)
