"""Bipartite user-item graphs, their same-side projections and components."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import EmptyDataset, IndexOutOfRange

USER = "user"
ITEM = "item"
SIDES = (USER, ITEM)


def _check_side(side: str) -> str:
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    return side


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Undirected, unweighted bipartite graph between users and items.

    ``edges`` is an ``(E, 2)`` array of ``(user, item)`` index pairs sorted
    lexicographically and free of duplicates. Use :meth:`from_edges` (or
    :func:`build_graph`) rather than the raw constructor; it normalizes and
    validates its input. Labels map dense indices back to the raw ids the
    graph was ingested from.
    """

    user_count: int
    item_count: int
    edges: np.ndarray
    user_labels: tuple | None = None
    item_labels: tuple | None = None

    @classmethod
    def from_edges(
        cls,
        users: Sequence[int] | np.ndarray,
        items: Sequence[int] | np.ndarray,
        user_count: int,
        item_count: int,
        user_labels: Sequence[Hashable] | None = None,
        item_labels: Sequence[Hashable] | None = None,
    ) -> "BipartiteGraph":
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if users.size and (users.min() < 0 or users.max() >= user_count):
            raise IndexOutOfRange("user index outside [0, user_count)")
        if items.size and (items.min() < 0 or items.max() >= item_count):
            raise IndexOutOfRange("item index outside [0, item_count)")
        keys = np.unique(users * max(item_count, 1) + items)
        edges = np.empty((keys.size, 2), dtype=np.int64)
        if item_count:
            edges[:, 0], edges[:, 1] = np.divmod(keys, item_count)
        if user_labels is not None:
            user_labels = tuple(user_labels)
            if len(user_labels) != user_count:
                raise ValueError("user_labels length must equal user_count")
        if item_labels is not None:
            item_labels = tuple(item_labels)
            if len(item_labels) != item_count:
                raise ValueError("item_labels length must equal item_count")
        return cls(int(user_count), int(item_count), _frozen(edges), user_labels, item_labels)

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    @property
    def users(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def items(self) -> np.ndarray:
        return self.edges[:, 1]

    @cached_property
    def _user_csr(self) -> tuple[np.ndarray, np.ndarray]:
        # edges are sorted by (user, item) already
        indptr = np.zeros(self.user_count + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.users, minlength=self.user_count), out=indptr[1:])
        return _frozen(indptr), _frozen(self.items.copy())

    @cached_property
    def _item_csr(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.lexsort((self.users, self.items))
        indptr = np.zeros(self.item_count + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.items, minlength=self.item_count), out=indptr[1:])
        return _frozen(indptr), _frozen(self.users[order])

    def neighbors(self, node: int, side: str) -> np.ndarray:
        """Sorted first-order neighbors of ``node`` (indices on the other side)."""
        indptr, indices = self._user_csr if _check_side(side) == USER else self._item_csr
        if not 0 <= node < indptr.size - 1:
            raise IndexOutOfRange(f"{side} index {node} out of range")
        return indices[indptr[node]:indptr[node + 1]]

    @cached_property
    def user_adjacency(self) -> tuple[np.ndarray, ...]:
        indptr, indices = self._user_csr
        return tuple(indices[indptr[u]:indptr[u + 1]] for u in range(self.user_count))

    @cached_property
    def item_adjacency(self) -> tuple[np.ndarray, ...]:
        indptr, indices = self._item_csr
        return tuple(indices[indptr[i]:indptr[i + 1]] for i in range(self.item_count))

    @cached_property
    def user_degrees(self) -> np.ndarray:
        return _frozen(np.diff(self._user_csr[0]))

    @cached_property
    def item_degrees(self) -> np.ndarray:
        return _frozen(np.diff(self._item_csr[0]))

    def degrees(self, side: str) -> np.ndarray:
        return self.user_degrees if _check_side(side) == USER else self.item_degrees

    def side_count(self, side: str) -> int:
        return self.user_count if _check_side(side) == USER else self.item_count

    @cached_property
    def interaction_matrix(self) -> sp.csr_matrix:
        """Binary ``U x I`` matrix R in CSR layout."""
        indptr, indices = self._user_csr
        data = np.ones(indices.size, dtype=np.float64)
        return sp.csr_matrix((data, indices, indptr), shape=(self.user_count, self.item_count))

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(i)) for u, i in self.edges}

    def labelled_edges(self) -> list[tuple[Hashable, Hashable]]:
        """Edges expressed with the raw ids (falls back to indices)."""
        ul = self.user_labels or range(self.user_count)
        il = self.item_labels or range(self.item_count)
        return [(ul[u], il[i]) for u, i in self.edges.tolist()]

    def __repr__(self) -> str:
        return f"BipartiteGraph(U={self.user_count}, I={self.item_count}, E={self.edge_count})"


@dataclass(frozen=True, eq=False)
class ProjectedGraph:
    """Same-side co-occurrence graph (R·Rᵀ for users, Rᵀ·R for items).

    ``weighted_adjacency`` holds the off-diagonal co-occurrence counts; the
    diagonal (each node's bipartite degree) lives in ``diagonal``.
    """

    side: str
    node_count: int
    weighted_adjacency: sp.csr_matrix
    diagonal: np.ndarray

    @cached_property
    def edge_list_binarized(self) -> np.ndarray:
        """``(K, 2)`` array of pairs ``v < w`` with positive co-occurrence."""
        coo = sp.triu(self.weighted_adjacency, k=1, format="coo")
        pairs = np.column_stack([coo.row, coo.col]).astype(np.int64)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return _frozen(pairs[order])

    @cached_property
    def binarized_degrees(self) -> np.ndarray:
        """Number of distinct same-side neighbors, self excluded."""
        return _frozen(np.diff(self.weighted_adjacency.indptr).astype(np.int64))

    def full_matrix(self) -> sp.csr_matrix:
        """Co-occurrence matrix with the diagonal put back."""
        return (self.weighted_adjacency + sp.diags(self.diagonal)).tocsr()


def build_graph(interactions: Iterable[tuple[Hashable, Hashable]]) -> BipartiteGraph:
    """Index raw ``(user_id, item_id)`` pairs densely, in order of first appearance."""
    user_index: dict[Hashable, int] = {}
    item_index: dict[Hashable, int] = {}
    us: list[int] = []
    its: list[int] = []
    for u, i in interactions:
        us.append(user_index.setdefault(u, len(user_index)))
        its.append(item_index.setdefault(i, len(item_index)))
    if not us:
        raise EmptyDataset("no interactions given")
    return BipartiteGraph.from_edges(
        us, its, len(user_index), len(item_index), tuple(user_index), tuple(item_index)
    )


def read_interactions(path: str | Path) -> list[tuple[str, str]]:
    """Parse ``user<TAB>item[<TAB>...]`` lines; ``#`` lines and blanks are skipped."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 2:
                raise ValueError(f"{path}:{lineno}: expected at least two tab-separated columns")
            pairs.append((cols[0], cols[1]))
    return pairs


def read_graph(path: str | Path) -> BipartiteGraph:
    return build_graph(read_interactions(path))


def write_graph(graph: BipartiteGraph, path: str | Path) -> None:
    write_edges(graph, graph.edges, path)


def write_edges(graph: BipartiteGraph, edges: np.ndarray, path: str | Path) -> None:
    """Write an edge subset of ``graph`` as TSV, using raw ids when available."""
    ul = graph.user_labels or range(graph.user_count)
    il = graph.item_labels or range(graph.item_count)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in np.asarray(edges).tolist():
            fh.write(f"{ul[u]}\t{il[i]}\n")


def neighborhood(graph: BipartiteGraph, node: int, side: str, hops: int) -> set[int]:
    """Nodes at exactly ``hops`` (1 or 2) steps from ``node``.

    One hop returns opposite-side indices; two hops returns same-side
    indices and never contains ``node`` itself.
    """
    if hops not in (1, 2):
        raise ValueError("hops must be 1 or 2")
    first = graph.neighbors(node, side)
    if hops == 1:
        return set(first.tolist())
    other = ITEM if side == USER else USER
    reach: set[int] = set()
    for n in first.tolist():
        reach.update(graph.neighbors(n, other).tolist())
    reach.discard(node)
    return reach


def project(graph: BipartiteGraph, side: str) -> ProjectedGraph:
    R = graph.interaction_matrix
    if _check_side(side) == USER:
        co = (R @ R.T).tocsr()
    else:
        co = (R.T @ R).tocsr()
    co = sp.csr_matrix(co, dtype=np.int64)
    diagonal = co.diagonal().astype(np.int64)
    co.setdiag(0)
    co.eliminate_zeros()
    co.sort_indices()
    return ProjectedGraph(side, co.shape[0], co, _frozen(diagonal))


def induced_subgraph(
    graph: BipartiteGraph, edges: np.ndarray, drop_isolated: bool = True
) -> BipartiteGraph:
    """Graph on an edge subset of ``graph``, re-indexed densely.

    Relative index order (and labels) of the surviving nodes is preserved.
    With ``drop_isolated=False`` every node of ``graph`` is kept.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if not drop_isolated:
        return BipartiteGraph.from_edges(
            edges[:, 0], edges[:, 1], graph.user_count, graph.item_count,
            graph.user_labels, graph.item_labels,
        )
    keep_u = np.unique(edges[:, 0])
    keep_i = np.unique(edges[:, 1])
    new_u = np.searchsorted(keep_u, edges[:, 0])
    new_i = np.searchsorted(keep_i, edges[:, 1])
    ul = tuple(graph.user_labels[k] for k in keep_u.tolist()) if graph.user_labels else tuple(keep_u.tolist())
    il = tuple(graph.item_labels[k] for k in keep_i.tolist()) if graph.item_labels else tuple(keep_i.tolist())
    return BipartiteGraph.from_edges(new_u, new_i, keep_u.size, keep_i.size, ul, il)


def component_labels(graph: BipartiteGraph) -> tuple[int, np.ndarray]:
    """Connected components over the ``U + I`` nodes (users first)."""
    n = graph.user_count + graph.item_count
    rows = graph.users
    cols = graph.items + graph.user_count
    adj = sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    return connected_components(adj, directed=False)


def largest_connected_component(graph: BipartiteGraph) -> BipartiteGraph:
    """Induced subgraph on the widest connected component.

    Ties on node count go to the component with more edges, then to the one
    holding the smallest user index.
    """
    if graph.edge_count == 0:
        raise EmptyDataset("graph has no edges")
    n_comp, labels = component_labels(graph)
    U = graph.user_count
    sizes = np.bincount(labels, minlength=n_comp)
    edge_counts = np.bincount(labels[graph.users], minlength=n_comp)
    min_user = np.full(n_comp, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(min_user, labels[:U], np.arange(U, dtype=np.int64))
    # lexsort: last key is primary
    best = np.lexsort((min_user, -edge_counts, -sizes))[0]
    if edge_counts[best] == 0:
        raise EmptyDataset("graph has no edges")
    mask = labels[graph.users] == best
    return induced_subgraph(graph, graph.edges[mask])


def is_connected(graph: BipartiteGraph) -> bool:
    if graph.edge_count == 0:
        return False
    n_comp, _ = component_labels(graph)
    return n_comp == 1
