from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import bipartite_graphs, complete, graph_from
from oracles import central_difference, dense_R, lightgcn_oracle, max_relative_error
from topo_rec.errors import ConfigError, ShapeError, TrainingDiverged
from topo_rec.evaluation import split
from topo_rec.models import (
    EmbeddingState,
    TrainConfig,
    bpr_loss,
    dgcf_propagate,
    lightgcn_propagate,
    load_trained,
    save_trained,
    svdgcn_embed,
    svdgcn_partition_loss,
    train,
    ultragcn_aux,
    ultragcn_losses,
)
from topo_rec.models.losses import constraint_coefficient
from topo_rec.models.propagation import intent_softmax, run_layers
from topo_rec.models.training import MODELS, TrainedModel, early_stopping
from topo_rec.synthetic import block_interactions


def random_state(g, dim, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingState(rng.standard_normal((g.user_count, dim)), rng.standard_normal((g.item_count, dim)))


class TestLightGcn:
    def test_single_edge_swaps(self):
        g = graph_from([(0, 0)])
        s = random_state(g, 3)
        out = lightgcn_propagate(s, g, 1)
        l1u, l1i = out.layer_outputs[1]
        assert np.array_equal(l1u, s.item_embeddings) and np.array_equal(l1i, s.user_embeddings)

    def test_k22_fixed_point(self, k22):
        v = np.array([0.3, -1.2])
        s = EmbeddingState(np.tile(v, (2, 1)), np.tile(v, (2, 1)))
        out = lightgcn_propagate(s, k22, 1)
        assert np.allclose(out.layer_outputs[1][0], v, atol=1e-15)

    def test_dense_oracle_8x6(self):
        g = block_interactions(users=8, items=6, blocks=2, p_in=0.7, p_out=0.2, seed=0)
        s = random_state(g, 4)
        out = lightgcn_propagate(s, g, 3)
        fu, fi = lightgcn_oracle(g, s.user_embeddings, s.item_embeddings, 3)
        assert np.max(np.abs(out.user_embeddings - fu)) < 1e-10
        assert np.max(np.abs(out.item_embeddings - fi)) < 1e-10

    def test_shape_error(self, k22):
        with pytest.raises(ShapeError):
            lightgcn_propagate(EmbeddingState(np.zeros((3, 2)), np.zeros((2, 2))), k22, 1)


class TestDgcf:
    @settings(max_examples=30, deadline=None)
    @given(bipartite_graphs(), st.integers(0, 4))
    def test_one_intent_is_lightgcn(self, g, L):
        s = random_state(g, 4, seed=L)
        a = lightgcn_propagate(s, g, L)
        b, _ = dgcf_propagate(s, g, L, intent_count=1, routing_iterations=0)
        assert np.array_equal(a.user_embeddings, b.user_embeddings)
        assert np.array_equal(a.item_embeddings, b.item_embeddings)

    def test_no_routing_keeps_uniform_weights(self):
        g = block_interactions(users=10, items=8, seed=1)
        _, st_ = dgcf_propagate(random_state(g, 6), g, 2, intent_count=3, routing_iterations=0)
        assert np.array_equal(st_.intent_weights, np.full((g.edge_count, 3), 1 / 3))

    def test_two_intent_routing_by_hand(self):
        # u0-i0, u0-i1, u1-i1 with 2 intents of width 1
        g = graph_from([(0, 0), (0, 1), (1, 1)])
        eu = np.array([[1.0, -0.5], [0.2, 0.4]])
        ei = np.array([[0.3, 0.8], [-0.6, 0.1]])
        _, st_ = dgcf_propagate(EmbeddingState(eu, ei), g, 1, intent_count=2, routing_iterations=1)
        # uniform weights 1/2 per intent: weighted degrees u0=1, u1=0.5, i0=0.5, i1=1
        w = 0.5
        du, di = np.array([1.0, 0.5]), np.array([0.5, 1.0])
        agg = np.zeros((2, 2))
        for u, i in [(0, 0), (0, 1), (1, 1)]:
            agg[u] += w / np.sqrt(du[u] * di[i]) * ei[i]
        S = np.array([np.tanh(agg[u] * ei[i]) for u, i in [(0, 0), (0, 1), (1, 1)]])
        assert np.allclose(st_.scores, S, atol=1e-15)
        assert np.allclose(st_.intent_weights, intent_softmax(S), atol=1e-15)

    def test_indivisible(self, k22):
        with pytest.raises(ConfigError):
            dgcf_propagate(random_state(k22, 5), k22, 1, intent_count=2, routing_iterations=1)


class TestSvdGcn:
    def test_a1_zero_identity(self):
        g = block_interactions(users=12, items=9, seed=2)
        st_, emb = svdgcn_embed(g, 5, a1=0.0)
        assert np.array_equal(emb.user_embeddings, st_.left_vectors)
        assert np.array_equal(emb.item_embeddings, st_.right_vectors)

    def test_rank_one(self):
        g = complete(4, 3)
        st_, _ = svdgcn_embed(g, 3, a1=1.0, a2=1.0)
        assert st_.singular_values[0] > 0 and np.all(np.abs(st_.singular_values[1:]) < 1e-12)
        # the rank-1 normalized matrix is reconstructed by its first triplet
        from topo_rec.models.svdgcn import shifted_normalized_matrix
        A = shifted_normalized_matrix(g, 1.0).toarray()
        rec = st_.singular_values[0] * np.outer(st_.left_vectors[:, 0], st_.right_vectors[:, 0])
        assert np.max(np.abs(rec - A)) < 1e-12

    def test_dense_oracle(self):
        g = block_interactions(users=12, items=9, blocks=3, p_in=0.6, p_out=0.1, seed=3)
        st_, _ = svdgcn_embed(g, 4, a2=1.0)
        R = dense_R(g)
        du, di = R.sum(1) + 1.0, R.sum(0) + 1.0
        A = R / np.sqrt(du)[:, None] / np.sqrt(di)[None, :]
        assert np.allclose(st_.singular_values, np.linalg.svd(A, compute_uv=False)[:4], atol=1e-8)

    @settings(max_examples=30, deadline=None)
    @given(bipartite_graphs(), st.sampled_from([0.5, 1.0, 2.0]))
    def test_lambda_bound(self, g, a2):
        st_, _ = svdgcn_embed(g, 3, a2=a2)
        assert st_.singular_values[0] <= st_.lambda_bound * (1 + 1e-12)
        assert np.all(np.diff(st_.singular_values) <= 1e-15) and np.all(st_.singular_values >= -1e-15)

    def test_bad_a2(self, k22):
        with pytest.raises(ValueError):
            svdgcn_embed(k22, 1, a2=0.0)


class TestLosses:
    def setup_method(self):
        self.g = graph_from([(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 0), (4, 4), (4, 3)])
        rng = np.random.default_rng(0)
        self.eu = rng.standard_normal((5, 3))
        self.ei = rng.standard_normal((5, 3))
        self.users = np.array([0, 1, 2, 4, 0])
        self.pos = np.array([0, 1, 3, 4, 1])
        self.neg = np.array([[2, 3], [0, 4], [1, 0], [0, 1], [4, 2]])

    def test_bpr_gradient(self):
        f = lambda: bpr_loss(self.eu, self.ei, self.users, self.pos, self.neg[:, 0])[0]
        _, gu, gi = bpr_loss(self.eu, self.ei, self.users, self.pos, self.neg[:, 0])
        assert max_relative_error(gu, central_difference(f, self.eu)) < 1e-4
        assert max_relative_error(gi, central_difference(f, self.ei)) < 1e-4

    def test_ultragcn_single_edge_coefficient(self):
        assert constraint_coefficient(1, 1) == 1.0

    def test_ultragcn_gradient(self):
        aux = ultragcn_aux(self.g, 2)
        args = (self.users, self.pos, self.neg, aux, 0.7, 1.3, 0.01)
        f = lambda: ultragcn_losses(self.eu, self.ei, *args)[0]
        _, gu, gi = ultragcn_losses(self.eu, self.ei, *args)
        assert max_relative_error(gu, central_difference(f, self.eu)) < 1e-4
        assert max_relative_error(gi, central_difference(f, self.ei)) < 1e-4

    def test_ultragcn_zero_weights_is_bce(self):
        aux = ultragcn_aux(self.g, 2)
        loss, _, _ = ultragcn_losses(self.eu, self.ei, self.users, self.pos, self.neg, aux, 0.0, 0.0, 0.0)
        sp_ = np.einsum("bd,bd->b", self.eu[self.users], self.ei[self.pos])
        sn = np.einsum("bd,bnd->bn", self.eu[self.users], self.ei[self.neg])
        bce = -(np.log(1 / (1 + np.exp(-sp_))).sum() + np.log(1 / (1 + np.exp(sn))).sum()) / len(self.users)
        assert loss == pytest.approx(bce, rel=1e-12)

    def test_ultragcn_item_weights(self):
        aux = ultragcn_aux(self.g, 10)
        R = dense_R(self.g)
        G = R.T @ R
        deg = G.sum(1)
        i = 1
        for j, w in zip(aux.neighbor_ids[i], aux.neighbor_weights[i]):
            if w:
                want = G[i, j] / (deg[i] - G[i, i]) * np.sqrt(deg[i] / deg[j])
                assert w == pytest.approx(want, rel=1e-14)

    def test_isolated_item_skipped(self):
        g = graph_from([(0, 0), (1, 1), (1, 2)])
        assert ultragcn_aux(g, 3).skipped_items == (0,)

    def test_partition_saturation_and_log2(self):
        e = np.array([[10.0, 10.0], [10.0, 10.0], [1.0, 0.0], [0.0, 1.0]])
        lp, _ = svdgcn_partition_loss(e, [[0, 1]], np.empty((0, 2), dtype=int))
        assert lp < 1e-30
        ln, _ = svdgcn_partition_loss(e, np.empty((0, 2), dtype=int), [[2, 3]])
        assert ln == pytest.approx(np.log(2), abs=1e-15)

    def test_partition_gradient(self):
        e = np.random.default_rng(1).standard_normal((6, 3))
        pos, neg = [[0, 1], [2, 3], [4, 5], [1, 2]], [[0, 5], [3, 1], [2, 4], [5, 0]]
        f = lambda: svdgcn_partition_loss(e, pos, neg)[0]
        assert max_relative_error(svdgcn_partition_loss(e, pos, neg)[1], central_difference(f, e)) < 1e-4


@pytest.mark.parametrize("kind", sorted(MODELS))
def test_model_gradients(kind):
    """Full model loss (propagation included) against finite differences."""
    g = block_interactions(users=6, items=4, blocks=2, p_in=0.8, p_out=0.2, seed=0)
    cfg = TrainConfig(embedding_dim=4, layers=2, intents=2, routing_iterations=1, rank=3, reg=0.01,
                      negatives=2, item_neighbors=2, svd_trainable=True, partition_weight=0.5, a1=0.5)
    model = MODELS[kind](g, cfg, np.random.default_rng(0))
    users, pos = g.users[:5], g.items[:5]
    neg = np.random.default_rng(1).integers(0, g.item_count, size=(5, 2))
    _, grads = model.loss_and_grads(users, pos, neg, np.random.default_rng(2))
    if kind == "dgcf":
        # routing weights are a stop-gradient: freeze the operators at their current values
        ops = model._forward()[0]
        model._forward = lambda: (ops, run_layers(model.params["user"], model.params["item"], ops)[:2])
    for name, p in model.params.items():
        f = lambda: model.loss_and_grads(users, pos, neg, np.random.default_rng(2))[0]
        assert max_relative_error(grads[name], central_difference(f, p)) < 1e-4, name


class TestEarlyStopping:
    def test_decreasing_metric(self):
        metrics = iter([0.5, 0.4, 0.3, 0.2])
        snaps = iter(range(100))
        res = early_stopping(lambda e: 1.0, lambda: next(metrics), lambda: next(snaps), 10, 1)
        assert len(res.trace) == 2 and res.best_epoch == 1 and res.best_snapshot == 1

    def test_zero_learning_rate(self):
        g = block_interactions(users=40, items=30, seed=4)
        s = split(g, np.random.default_rng(0))
        m = train("lightgcn", s, TrainConfig(embedding_dim=8, learning_rate=0.0, patience=3, max_epochs=50))
        vals = {r.val_metric for r in m.trace}
        assert len(vals) == 1 and m.epochs_run == 4 and m.best_epoch == 1

    def test_divergence(self):
        with pytest.raises(TrainingDiverged) as exc:
            early_stopping(lambda e: float("nan") if e == 3 else 1.0, lambda: 0.1, lambda: None, 10, 5)
        assert exc.value.epoch == 3


class TestScoring:
    def model(self, ue, ie, train_items=None):
        return TrainedModel("lightgcn", TrainConfig(), np.asarray(ue, float), np.asarray(ie, float), [], 0, None,
                            train_items or {})

    def test_aligned_argmax(self):
        m = self.model(np.eye(3), np.eye(3))
        assert [int(np.argmax(m.score_all(u))) for u in range(3)] == [0, 1, 2]

    def test_zero_embeddings_tie_order(self):
        m = self.model(np.zeros((1, 2)), np.zeros((5, 2)))
        assert m.rank([0], {}, 3)[0].tolist() == [0, 1, 2]

    def test_hand_scores_and_mask(self):
        ue = [[1, 2, 0], [0, 1, 1], [2, 0, 1]]
        ie = [[1, 0, 0], [0, 1, 0], [1, 1, 1]]
        m = self.model(ue, ie, {0: np.array([2])})
        assert m.score_all(1).tolist() == [0, 1, 2]
        assert m.score_all(0).tolist() == [1, 2, -np.inf]
        assert 2 not in m.rank([0], {0: np.array([2])}, 3)[0].tolist()


def test_training_is_deterministic_and_persists(tmp_path):
    g = block_interactions(users=40, items=30, seed=5)
    s = split(g, np.random.default_rng(1))
    cfg = TrainConfig(embedding_dim=8, max_epochs=8, seed=3)
    a = train("dgcf", s, replace(cfg, intents=2))
    b = train("dgcf", s, replace(cfg, intents=2))
    assert [(r.loss, r.val_metric) for r in a.trace] == [(r.loss, r.val_metric) for r in b.trace]
    save_trained(a, tmp_path)
    header = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert header == "epoch,loss,val_recall@20"
    c = load_trained(tmp_path, s)
    assert np.array_equal(c.user_embeddings, a.user_embeddings)
    assert c.evaluate(s) == a.evaluate(s)


def test_unknown_option():
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"embeding_dim": 3})
