"""Spectral embeddings from the shifted-normalized interaction matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..errors import NumericsError
from ..graph import BipartiteGraph
from ..numerics import truncated_svd
from .propagation import EmbeddingState


@dataclass
class SvdGcnState:
    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    a1: float
    a2: float
    max_degree: int
    # None means the weight-free variant (W = identity)
    weight: Optional[np.ndarray] = None

    @property
    def lambda_bound(self) -> float:
        return self.max_degree / (self.max_degree + self.a2)

    def spectral_user(self) -> np.ndarray:
        return self.left_vectors * np.exp(self.a1 * self.singular_values)

    def spectral_item(self) -> np.ndarray:
        return self.right_vectors * np.exp(self.a1 * self.singular_values)

    def embeddings(self) -> EmbeddingState:
        pu, qi = self.spectral_user(), self.spectral_item()
        if self.weight is not None:
            pu, qi = pu @ self.weight, qi @ self.weight
        return EmbeddingState(pu, qi)


def shifted_normalized_matrix(graph: BipartiteGraph, a2: float) -> sp.csr_matrix:
    """``(D_u + a2)^-1/2 R (D_i + a2)^-1/2``."""
    du = graph.user_degrees.astype(np.float64) + a2
    di = graph.item_degrees.astype(np.float64) + a2
    R = graph.interaction_matrix
    return (sp.diags(1.0 / np.sqrt(du)) @ R @ sp.diags(1.0 / np.sqrt(di))).tocsr()


def svdgcn_embed(
    graph: BipartiteGraph,
    rank: int,
    a1: float = 1.0,
    a2: float = 1.0,
    weight: Optional[np.ndarray] = None,
    seed: int = 0,
) -> tuple[SvdGcnState, EmbeddingState]:
    """Truncated SVD of the normalized matrix, embeddings ``p exp(a1 λ) W``.

    Raises ``NumericsError`` if the largest singular value breaks the
    ``max_deg / (max_deg + a2)`` bound.
    """
    if a2 <= 0:
        raise ValueError("a2 must be positive")
    k = min(rank, graph.user_count, graph.item_count)
    P, lam, Q = truncated_svd(shifted_normalized_matrix(graph, a2), k, seed=seed)
    max_degree = int(max(graph.user_degrees.max(initial=0), graph.item_degrees.max(initial=0)))
    state = SvdGcnState(lam, P, Q, float(a1), float(a2), max_degree, weight)
    if lam.size and lam[0] > state.lambda_bound * (1 + 1e-12):
        raise NumericsError(
            f"largest singular value {lam[0]!r} exceeds bound {state.lambda_bound!r}"
        )
    return state, state.embeddings()
