import numpy as np
import pytest
from hypothesis import given, settings

from builders import bipartite_graphs, graph_from
from oracles import dense_R, two_hop
from topo_rec.errors import EmptyDataset, IndexOutOfRange
from topo_rec.graph import (
    ITEM,
    USER,
    BipartiteGraph,
    build_graph,
    component_labels,
    induced_subgraph,
    is_connected,
    largest_connected_component,
    neighborhood,
    project,
    read_graph,
    write_graph,
)


class TestBuildGraph:
    def test_counts(self):
        g = build_graph([("a", "x"), ("a", "y"), ("b", "x")])
        assert (g.user_count, g.item_count, g.edge_count) == (2, 2, 3)

    def test_duplicates_collapse(self):
        assert build_graph([("a", "x"), ("a", "x")]).edge_count == 1

    def test_complete(self):
        g = build_graph([(u, i) for u in range(4) for i in range(9)])
        assert g.edge_count == 36

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            build_graph([])

    def test_first_appearance_labels(self):
        g = build_graph([("b", "y"), ("a", "y"), ("b", "x")])
        assert g.user_labels == ("b", "a")
        assert g.item_labels == ("y", "x")
        assert sorted(g.labelled_edges()) == [("a", "y"), ("b", "x"), ("b", "y")]

    def test_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            BipartiteGraph.from_edges([0, 3], [0, 0], 2, 1)

    def test_edges_read_only(self, k22):
        with pytest.raises(ValueError):
            k22.edges[0, 0] = 1


@settings(max_examples=60, deadline=None)
@given(bipartite_graphs())
def test_structural_invariants(g):
    assert g.user_degrees.sum() == g.item_degrees.sum() == g.edge_count
    from_adj = {(u, int(i)) for u, nb in enumerate(g.user_adjacency) for i in nb}
    assert from_adj == g.edge_set()
    for nb in g.user_adjacency + g.item_adjacency:
        assert np.all(np.diff(nb) > 0)


class TestNeighborhood:
    def test_k22(self, k22):
        assert neighborhood(k22, 0, USER, 2) == {1}

    def test_path(self, path4):
        assert neighborhood(path4, 0, USER, 2) == {1}

    def test_single_edge(self):
        assert neighborhood(graph_from([(0, 0)]), 0, USER, 2) == set()

    def test_one_hop(self, path4):
        assert neighborhood(path4, 1, USER, 1) == {0, 1}

    def test_bad_index(self, k22):
        with pytest.raises(IndexOutOfRange):
            neighborhood(k22, 5, USER, 1)

    @settings(max_examples=40, deadline=None)
    @given(bipartite_graphs())
    def test_matches_brute_force(self, g):
        for side in (USER, ITEM):
            for v in range(g.side_count(side)):
                assert neighborhood(g, v, side, 2) == two_hop(g, side, v)


class TestProject:
    def test_k22_users(self, k22):
        p = project(k22, USER)
        assert p.weighted_adjacency.toarray().tolist() == [[0, 2], [2, 0]]
        assert p.diagonal.tolist() == [2, 2]

    def test_single_edge(self):
        p = project(graph_from([(0, 0)]), USER)
        assert p.diagonal.tolist() == [1]
        assert p.edge_list_binarized.shape == (0, 2)

    def test_path_items(self, path4):
        p = project(path4, ITEM)
        assert p.edge_list_binarized.tolist() == [[0, 1]]
        assert p.weighted_adjacency[0, 1] == 1

    @settings(max_examples=60, deadline=None)
    @given(bipartite_graphs(max_users=20, max_items=20))
    def test_dense_product(self, g):
        R = dense_R(g)
        for side, full in ((USER, R @ R.T), (ITEM, R.T @ R)):
            p = project(g, side)
            assert np.array_equal(p.full_matrix().toarray(), full)
            assert np.array_equal(p.diagonal, g.degrees(side))
            assert np.all(p.edge_list_binarized[:, 0] < p.edge_list_binarized[:, 1])
            W = p.weighted_adjacency
            assert (W != W.T).nnz == 0


class TestComponents:
    def test_larger_component_wins(self):
        # 3 nodes (u0,i0,u1) and 5 nodes (u2,u3,i1,i2,i3)
        g = graph_from([(0, 0), (1, 0), (2, 1), (2, 2), (3, 2), (3, 3)])
        lcc = largest_connected_component(g)
        assert lcc.user_count + lcc.item_count == 5
        assert lcc.edge_count == 4

    def test_connected_is_identity(self, k22):
        lcc = largest_connected_component(k22)
        assert lcc.edge_set() == k22.edge_set()

    def test_edge_tie_break(self):
        # both have 4 nodes: a path (3 edges) and a K2,2 (4 edges)
        g = graph_from([(0, 0), (1, 0), (1, 1), (2, 2), (2, 3), (3, 2), (3, 3)])
        assert largest_connected_component(g).edge_count == 4

    def test_min_user_tie_break(self):
        # identical shapes: the component holding user 0 wins
        g = graph_from([(0, 1), (1, 0)])
        lcc = largest_connected_component(g)
        assert lcc.user_labels == (0,) and lcc.item_labels == (1,)

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            largest_connected_component(BipartiteGraph.from_edges([], [], 2, 2))

    @settings(max_examples=60, deadline=None)
    @given(bipartite_graphs())
    def test_connected_subgraph(self, g):
        lcc = largest_connected_component(g)
        assert is_connected(lcc)
        labelled = {(int(u), int(i)) for u, i in lcc.labelled_edges()}
        assert labelled <= g.edge_set()
        n_comp, _ = component_labels(lcc)
        assert n_comp == 1


def test_induced_subgraph_keeps_labels():
    g = build_graph([("a", "x"), ("b", "y"), ("c", "z")])
    sub = induced_subgraph(g, g.edges[1:])
    assert sorted(sub.labelled_edges()) == [("b", "y"), ("c", "z")]
    keep_all = induced_subgraph(g, g.edges[1:], drop_isolated=False)
    assert keep_all.user_count == 3 and keep_all.edge_count == 2


def test_tsv_roundtrip(tmp_path):
    p = tmp_path / "in.tsv"
    p.write_text("# header\nu1\ti1\textra\n\nu2\ti1\nu1\ti2\nu1\ti1\n", encoding="utf-8")
    g = read_graph(p)
    assert (g.user_count, g.item_count, g.edge_count) == (2, 2, 3)
    write_graph(g, tmp_path / "out.tsv")
    assert sorted(read_graph(tmp_path / "out.tsv").labelled_edges()) == sorted(g.labelled_edges())
