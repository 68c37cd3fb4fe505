"""Small graph builders and hypothesis strategies shared by the tests."""

import numpy as np
from hypothesis import strategies as st

from topo_rec.graph import BipartiteGraph


def graph_from(edges, U=None, I=None) -> BipartiteGraph:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    U = int(e[:, 0].max()) + 1 if U is None else U
    I = int(e[:, 1].max()) + 1 if I is None else I
    return BipartiteGraph.from_edges(e[:, 0], e[:, 1], U, I)


def complete(U, I) -> BipartiteGraph:
    uu, ii = np.meshgrid(np.arange(U), np.arange(I), indexing="ij")
    return BipartiteGraph.from_edges(uu.ravel(), ii.ravel(), U, I)


@st.composite
def bipartite_graphs(draw, max_users=12, max_items=12, min_edges=1):
    """Graphs whose every node has at least one edge."""
    U = draw(st.integers(1, max_users))
    I = draw(st.integers(1 if U >= min_edges else -(-min_edges // U), max_items))
    pairs = draw(st.sets(st.tuples(st.integers(0, U - 1), st.integers(0, I - 1)),
                         min_size=min_edges, max_size=U * I))
    e = np.array(sorted(pairs), dtype=np.int64)
    # re-index away isolated nodes
    _, u = np.unique(e[:, 0], return_inverse=True)
    _, i = np.unique(e[:, 1], return_inverse=True)
    return BipartiteGraph.from_edges(u, i, int(u.max()) + 1, int(i.max()) + 1)
