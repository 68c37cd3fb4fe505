"""Ranking losses with hand-derived gradients.

Every function returns ``(loss, gradients)`` where the gradients are dense
arrays shaped like the embedding tables they refer to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..graph import ITEM, BipartiteGraph, project


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def bpr_loss(user_emb, item_emb, users, pos, neg):
    """Mean of ``-log sig(e_u·e_i - e_u·e_j)`` over the batch."""
    users, pos, neg = (np.asarray(a, dtype=np.int64) for a in (users, pos, neg))
    B = users.size
    eu, ep, en = user_emb[users], item_emb[pos], item_emb[neg]
    x = np.einsum("bd,bd->b", eu, ep - en)
    loss = -log_sigmoid(x).mean()
    dx = -expit(-x) / B
    gu = np.zeros_like(user_emb)
    gi = np.zeros_like(item_emb)
    np.add.at(gu, users, dx[:, None] * (ep - en))
    np.add.at(gi, pos, dx[:, None] * eu)
    np.add.at(gi, neg, -dx[:, None] * eu)
    return float(loss), gu, gi


def l2_rows(table, rows, reg):
    """``reg/2 * sum ||table[r]||^2`` over ``rows`` (repeats count) and its gradient."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    sub = table[rows]
    g = np.zeros_like(table)
    np.add.at(g, rows, reg * sub)
    return 0.5 * reg * float((sub * sub).sum()), g


@dataclass(frozen=True)
class UltraGcnAux:
    """Degree and item-neighbor tables precomputed from the training graph."""

    user_degrees: np.ndarray
    item_degrees: np.ndarray
    # (I, k) neighbor ids padded with 0; padded slots carry weight 0
    neighbor_ids: np.ndarray
    neighbor_weights: np.ndarray
    skipped_items: tuple[int, ...] = ()


def ultragcn_aux(train_graph: BipartiteGraph, neighbors: int) -> UltraGcnAux:
    """Top-``neighbors`` co-occurring items per item and their loss weights.

    Weight of neighbor j for item i:
    ``R^I_ij / (deg^I_i - R^I_ii) * sqrt(deg^I_i / deg^I_j)`` where
    ``deg^I`` is the row sum of ``Rᵀ R`` including its diagonal. Items with
    no co-occurring item are skipped.
    """
    proj = project(train_graph, ITEM)
    off = proj.weighted_adjacency
    I = proj.node_count
    off_sum = np.asarray(off.sum(axis=1)).ravel().astype(np.float64)
    deg = off_sum + proj.diagonal
    ids = np.zeros((I, max(neighbors, 1)), dtype=np.int64)
    weights = np.zeros((I, max(neighbors, 1)), dtype=np.float64)
    skipped = []
    for i in range(I):
        lo, hi = off.indptr[i], off.indptr[i + 1]
        if hi == lo:
            skipped.append(i)
            continue
        cols, vals = off.indices[lo:hi], off.data[lo:hi]
        # highest co-occurrence first, ties by item index
        order = np.lexsort((cols, -vals))[:neighbors]
        j, c = cols[order], vals[order].astype(np.float64)
        ids[i, : j.size] = j
        weights[i, : j.size] = c / off_sum[i] * np.sqrt(deg[i] / deg[j])
    return UltraGcnAux(
        train_graph.user_degrees.astype(np.float64),
        train_graph.item_degrees.astype(np.float64),
        ids,
        weights,
        tuple(skipped),
    )


def constraint_coefficient(deg_u, deg_v):
    """``(1/deg_u) * sqrt(deg_u + 1) / sqrt(deg_v + 1)``."""
    deg_u = np.asarray(deg_u, dtype=np.float64)
    deg_v = np.asarray(deg_v, dtype=np.float64)
    return np.sqrt(deg_u + 1.0) / (deg_u * np.sqrt(deg_v + 1.0))


def ultragcn_losses(
    user_emb,
    item_emb,
    users,
    pos,
    neg,
    aux: UltraGcnAux,
    constraint_weight: float = 1.0,
    item_weight: float = 1.0,
    reg: float = 0.0,
):
    """Binary cross-entropy plus the degree-weighted constraint and item-item terms.

    ``neg`` has shape ``(B, n_neg)``. The total is divided by the batch size.
    """
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    neg = np.asarray(neg, dtype=np.int64).reshape(users.size, -1)
    B = users.size
    eu, ep, en = user_emb[users], item_emb[pos], item_emb[neg]
    gu = np.zeros_like(user_emb)
    gi = np.zeros_like(item_emb)

    du = aux.user_degrees[users]
    s_pos = np.einsum("bd,bd->b", eu, ep)
    s_neg = np.einsum("bd,bnd->bn", eu, en)
    c_pos = 1.0 + constraint_weight * constraint_coefficient(du, aux.item_degrees[pos])
    c_neg = 1.0 + constraint_weight * constraint_coefficient(du[:, None], aux.item_degrees[neg])
    loss = -(c_pos * log_sigmoid(s_pos)).sum() - (c_neg * log_sigmoid(-s_neg)).sum()
    d_pos = -c_pos * expit(-s_pos)
    d_neg = c_neg * expit(s_neg)

    g_eu = d_pos[:, None] * ep + np.einsum("bn,bnd->bd", d_neg, en)
    np.add.at(gi, pos, d_pos[:, None] * eu)
    np.add.at(gi, neg.ravel(), (d_neg[:, :, None] * eu[:, None, :]).reshape(-1, eu.shape[1]))

    if item_weight:
        nb = aux.neighbor_ids[pos]
        w = aux.neighbor_weights[pos]
        s_nb = np.einsum("bd,bkd->bk", eu, item_emb[nb])
        loss += -item_weight * (w * log_sigmoid(s_nb)).sum()
        d_nb = -item_weight * w * expit(-s_nb)
        g_eu += np.einsum("bk,bkd->bd", d_nb, item_emb[nb])
        np.add.at(gi, nb.ravel(), (d_nb[:, :, None] * eu[:, None, :]).reshape(-1, eu.shape[1]))

    np.add.at(gu, users, g_eu)
    loss = float(loss)
    if reg:
        lu, ru = l2_rows(user_emb, users, reg)
        li, ri = l2_rows(item_emb, np.concatenate([pos, neg.ravel()]), reg)
        loss += lu + li
        gu += ru
        gi += ri
    return loss / B, gu / B, gi / B


def svdgcn_partition_loss(embeddings, positive_pairs, negative_pairs):
    """``-sum log sig(e_v·e_w) - sum log sig(-e_v·e_j)`` over same-side pairs."""
    pp = np.asarray(positive_pairs, dtype=np.int64).reshape(-1, 2)
    nn = np.asarray(negative_pairs, dtype=np.int64).reshape(-1, 2)
    E = embeddings
    g = np.zeros_like(E)
    sp_ = np.einsum("bd,bd->b", E[pp[:, 0]], E[pp[:, 1]])
    sn = np.einsum("bd,bd->b", E[nn[:, 0]], E[nn[:, 1]])
    loss = -log_sigmoid(sp_).sum() - log_sigmoid(-sn).sum()
    dp = -expit(-sp_)
    dn = expit(sn)
    np.add.at(g, pp[:, 0], dp[:, None] * E[pp[:, 1]])
    np.add.at(g, pp[:, 1], dp[:, None] * E[pp[:, 0]])
    np.add.at(g, nn[:, 0], dn[:, None] * E[nn[:, 1]])
    np.add.at(g, nn[:, 1], dn[:, None] * E[nn[:, 0]])
    return float(loss), g
