"""Acceptance checks, one test (or class) per criterion.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance
criteria" section of the terminal summary for one PASS/FAIL line each.
"""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from builders import graph_from
from oracles import (
    central_difference,
    characteristics_oracle,
    gini_pairwise,
    lightgcn_oracle,
    max_relative_error,
)
from topo_rec.characteristics import CHARACTERISTIC_NAMES, compute_all, gini
from topo_rec.cli import main
from topo_rec.config import bundled_path
from topo_rec.errors import Log10OfZero
from topo_rec.evaluation import random_baseline, split
from topo_rec.explainer import ExplainerConfig, alpha_mix_study, explain, mix_counts
from topo_rec.graph import read_graph
from topo_rec.models import (
    MODEL_KINDS,
    EmbeddingState,
    TrainConfig,
    bpr_loss,
    dgcf_propagate,
    lightgcn_propagate,
    svdgcn_embed,
    svdgcn_partition_loss,
    train,
    ultragcn_aux,
    ultragcn_losses,
)
from topo_rec.models.svdgcn import shifted_normalized_matrix
from topo_rec.numerics import fit_degree_distribution, truncated_svd
from topo_rec.sampler import drop_edges, edge_dropout, node_dropout
from topo_rec.synthetic import block_interactions, power_law_interactions, synthetic_records

FIXTURE_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "fixture.yaml"


def random_graph(rng, max_users=30, max_items=30):
    """Random bipartite graph without isolated nodes."""
    while True:
        U, I = rng.integers(1, max_users + 1), rng.integers(1, max_items + 1)
        R = rng.random((U, I)) < rng.uniform(0.05, 0.6)
        u, i = np.nonzero(R)
        if len(u):
            _, u = np.unique(u, return_inverse=True)
            _, i = np.unique(i, return_inverse=True)
            return graph_from(list(zip(u.tolist(), i.tolist())))


def detail(record_property, text):
    record_property("detail", text)


@pytest.mark.criterion(1, "characteristics match brute-force oracles")
def test_characteristics_oracle(record_property):
    rng = np.random.default_rng(2024)
    graphs = [random_graph(rng) for _ in range(500)]
    worst, compared, undefined, elapsed = 0.0, 0, 0, 0.0
    for g in graphs:
        try:
            want = characteristics_oracle(g)
        except ValueError:
            want = None
        t0 = time.perf_counter()
        try:
            got = compute_all(g).as_dict()
        except Log10OfZero:
            got = None
        elapsed += time.perf_counter() - t0
        # a zero clustering average has no logarithm in either implementation
        assert (got is None) == (want is None)
        if got is None:
            undefined += 1
            continue
        compared += 1
        for n in CHARACTERISTIC_NAMES:
            if want[n] is None:
                assert got[n] is None, n
            else:
                worst = max(worst, abs(got[n] - want[n]))
    detail(record_property, f"{compared} graphs compared, {undefined} log-undefined, max err {worst:.1e}, "
                            f"{elapsed:.1f}s")
    assert compared >= 400
    assert worst <= 1e-10
    assert elapsed < 30


@pytest.mark.criterion(2, "pairwise Gini equals sorted-array Gini")
def test_gini_identity(record_property):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        d = rng.integers(1, 200, size=rng.integers(1, 80))
        worst = max(worst, abs(gini(d) - gini_pairwise(d)))
    detail(record_property, f"max err {worst:.1e}")
    assert worst <= 1e-12


@pytest.mark.criterion(3, "LightGCN equals dense normalized-adjacency oracle")
def test_lightgcn_oracle(record_property):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        g = random_graph(rng, 25, 25)
        L = int(rng.integers(0, 5))
        s = EmbeddingState(rng.standard_normal((g.user_count, 8)), rng.standard_normal((g.item_count, 8)))
        out = lightgcn_propagate(s, g, L)
        fu, fi = lightgcn_oracle(g, s.user_embeddings, s.item_embeddings, L)
        worst = max(worst, np.max(np.abs(out.user_embeddings - fu)), np.max(np.abs(out.item_embeddings - fi)))
    detail(record_property, f"max err {worst:.1e}")
    assert worst <= 1e-10


@pytest.mark.criterion(4, "one-intent DGCF is bit-identical to LightGCN")
def test_dgcf_reduces_to_lightgcn():
    rng = np.random.default_rng(4)
    for _ in range(50):
        g = random_graph(rng)
        L = int(rng.integers(0, 5))
        s = EmbeddingState(rng.standard_normal((g.user_count, 6)), rng.standard_normal((g.item_count, 6)))
        a = lightgcn_propagate(s, g, L)
        for rounds in (0, 2):
            b, _ = dgcf_propagate(s, g, L, intent_count=1, routing_iterations=rounds)
            assert np.array_equal(a.user_embeddings, b.user_embeddings)
            assert np.array_equal(a.item_embeddings, b.item_embeddings)


@pytest.mark.criterion(5, "SVD-GCN singular-value bound and truncated SVD accuracy")
def test_svdgcn_bound_and_svd(record_property):
    rng = np.random.default_rng(5)
    worst, slack = 0.0, np.inf
    for _ in range(100):
        g = random_graph(rng)
        k = min(g.user_count, g.item_count, 4)
        for a2 in (0.5, 1.0, 2.0):
            st, _ = svdgcn_embed(g, k, a2=a2)
            assert st.singular_values[0] <= st.lambda_bound * (1 + 1e-12)
            slack = min(slack, st.lambda_bound - st.singular_values[0])
            dense = np.linalg.svd(shifted_normalized_matrix(g, a2).toarray(), compute_uv=False)[:k]
            _, s, _ = truncated_svd(shifted_normalized_matrix(g, a2), k)
            worst = max(worst, np.max(np.abs(s - dense)), np.max(np.abs(st.singular_values - dense)))
    detail(record_property, f"min slack {slack:.2e}, max svd err {worst:.1e}")
    assert worst <= 1e-8


class TestGradients:
    """Criterion 6 on a 5-user / 5-item fixture."""

    g = graph_from([(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 0), (4, 4), (4, 3)])
    users = np.array([0, 1, 2, 4, 0, 3])
    pos = np.array([0, 1, 3, 4, 1, 0])
    neg = np.array([[2, 3], [0, 4], [1, 0], [0, 1], [4, 2], [1, 2]])

    def emb(self, seed):
        rng = np.random.default_rng(seed)
        return rng.standard_normal((5, 4)), rng.standard_normal((5, 4))

    def check(self, f, analytic, params, record_property):
        err = max(max_relative_error(a, central_difference(f, p)) for a, p in zip(analytic, params))
        detail(record_property, f"rel err {err:.1e}")
        assert err <= 1e-4

    @pytest.mark.criterion(6, "loss gradients match central differences")
    def test_bpr(self, record_property):
        eu, ei = self.emb(0)
        f = lambda: bpr_loss(eu, ei, self.users, self.pos, self.neg[:, 0])[0]
        self.check(f, bpr_loss(eu, ei, self.users, self.pos, self.neg[:, 0])[1:], (eu, ei), record_property)

    @pytest.mark.criterion(6, "loss gradients match central differences")
    def test_ultragcn(self, record_property):
        eu, ei = self.emb(1)
        args = (self.users, self.pos, self.neg, ultragcn_aux(self.g, 3), 0.9, 2.5, 0.01)
        f = lambda: ultragcn_losses(eu, ei, *args)[0]
        self.check(f, ultragcn_losses(eu, ei, *args)[1:], (eu, ei), record_property)

    @pytest.mark.criterion(6, "loss gradients match central differences")
    def test_partition(self, record_property):
        e = np.random.default_rng(2).standard_normal((10, 3))
        pos, neg = [[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]], [[0, 9], [3, 1], [2, 8], [5, 0], [7, 4]]
        f = lambda: svdgcn_partition_loss(e, pos, neg)[0]
        self.check(f, (svdgcn_partition_loss(e, pos, neg)[1],), (e,), record_property)


@pytest.fixture(scope="module")
def desk_dataset():
    g = block_interactions(users=200, items=100, seed=0)
    parts = split(g, np.random.default_rng(0))
    return parts, random_baseline(parts, k=20, shuffles=100, seed=0)


@pytest.mark.criterion(7, "desk-scale training beats 2x the random ranker")
@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_desk_training(kind, desk_dataset, record_property):
    parts, base = desk_dataset
    cfg = replace(TrainConfig(), max_epochs=200, seed=0)
    t0 = time.perf_counter()
    model = train(kind, parts, cfg)
    elapsed = time.perf_counter() - t0
    recall = model.evaluate(parts)["recall"]
    again = train(kind, parts, cfg)
    detail(record_property, f"{kind} {recall / base:.2f}x in {elapsed:.1f}s")
    assert model.epochs_run <= 200
    assert recall >= 2 * base
    assert elapsed < 300
    assert np.array_equal(again.user_embeddings, model.user_embeddings)
    assert again.evaluate(parts)["recall"] == recall


TRUE = {"density_log": 0.8, "gini_u": -0.5}


@pytest.mark.criterion(8, "OLS recovers exact and noisy linear signals")
def test_ols_exact_recovery(record_property):
    recs = synthetic_records(np.random.default_rng(0), 200, TRUE)
    rep = explain(recs, "lightgcn", "recall@20", ExplainerConfig(standardize=False))
    got = dict(zip(rep.names, rep.fit.coefficients))
    err = max(abs(got[n] - TRUE.get(n, 0.0)) for n in CHARACTERISTIC_NAMES)
    detail(record_property, f"max coefficient err {err:.1e}, adj R2 {rep.fit.adj_r_squared!r}")
    assert err <= 1e-8
    assert rep.fit.adj_r_squared == pytest.approx(1.0, abs=1e-12)


@pytest.mark.criterion(8, "OLS recovers exact and noisy linear signals")
def test_ols_noisy_significance(record_property):
    nulls = [n for n in CHARACTERISTIC_NAMES if n not in TRUE]
    true_hits, null_clear, joint = 0, np.zeros(len(nulls)), 0
    for seed in range(50):
        recs = synthetic_records(np.random.default_rng(seed), 200, TRUE, noise=0.01)
        p = dict(zip(CHARACTERISTIC_NAMES, explain(recs, "lightgcn", "recall@20").fit.coefficient_p_values))
        t_ok = all(p[n] < 0.001 for n in TRUE)
        clear = np.array([p[n] > 0.05 for n in nulls])
        true_hits += t_ok
        null_clear += clear
        joint += t_ok and clear.all()
    rates = null_clear / 50
    # each null p-value is uniform, so the joint event over nine nulls has
    # probability near 0.95**9 = 0.63; it is reported but not asserted
    detail(record_property, f"true p<0.001 in {true_hits}/50, worst null clear rate {rates.min():.2f}, "
                            f"joint rate {joint / 50:.2f}")
    assert true_hits / 50 >= 0.9
    assert np.all(rates >= 0.9)


@pytest.mark.criterion(9, "alpha-mix counts and reproducible averages")
def test_alpha_mix(record_property):
    node = synthetic_records(np.random.default_rng(1), 60, TRUE, noise=0.05)
    edge = synthetic_records(np.random.default_rng(2), 60, TRUE, noise=0.05, strategy="edge_dropout",
                             first_id=1000)
    alphas, total = (0.0, 0.3, 0.7, 1.0), 50
    a = alpha_mix_study(node, edge, alphas, total, "lightgcn", "recall@20", np.random.default_rng(9))
    b = alpha_mix_study(node, edge, alphas, total, "lightgcn", "recall@20", np.random.default_rng(9))
    assert len(a) == 4
    by_id = {r.sample_id: r for r in node + edge}
    for alpha, res in zip(alphas, a):
        n_node = math.floor(round((1 - alpha) * total, 9))
        assert (res.n_node, res.n_edge) == (n_node, total - n_node) == mix_counts(alpha, total)
        assert sum(i < 1000 for i in res.sample_ids) == res.n_node
        chosen = [by_id[i] for i in res.sample_ids]
        assert res.avg_users == math.fsum(r.n_users for r in chosen) / total
        assert res.avg_edges == math.fsum(r.n_edges for r in chosen) / total
    assert [r.summary() for r in a] == [r.summary() for r in b]
    detail(record_property, " ".join(f"{r.alpha:g}:{r.n_node}/{r.n_edge}" for r in a))


@pytest.mark.criterion(10, "sampling statistics")
def test_edge_dropout_exact_count():
    g = read_graph(bundled_path("fixture_500x400.tsv"))
    assert g.edge_count == 10_000
    for seed in range(20):
        assert drop_edges(g, 0.8, np.random.default_rng(seed)).edge_count == 2000


@pytest.mark.criterion(10, "sampling statistics")
def test_node_fraction_direction(record_property):
    g = power_law_interactions(300, 250, 4000, seed=1)
    n = g.user_count + g.item_count

    def fraction(fn, seed):
        sub = fn(g, 0.8, np.random.default_rng(seed))
        return (sub.user_count + sub.item_count) / n

    node = np.mean([fraction(node_dropout, s) for s in range(200)])
    edge = np.mean([fraction(edge_dropout, s) for s in range(200)])
    detail(record_property, f"node-dropout {node:.3f} vs edge-dropout {edge:.3f}")
    assert node <= edge


@pytest.mark.criterion(11, "degree-distribution fit")
def test_degree_fit(record_property):
    d = np.arange(1, 101)
    fit = fit_degree_distribution(np.repeat(d, np.round(1e7 * d ** -2.0).astype(int)))
    assert fit.preferred == "power_law"
    assert abs(fit.power_law_exponent - 2.0) <= 0.05
    d = np.arange(1, 41)
    counts = np.round(1e7 * 0.3 * 0.7 ** (d - 1)).astype(int)
    geo = fit_degree_distribution(np.repeat(d[counts > 0], counts[counts > 0]))
    assert geo.preferred == "exponential"
    detail(record_property, f"exponent {fit.power_law_exponent:.4f}")


@pytest.mark.slow
@pytest.mark.criterion(12, "golden run is byte-identical across runs and worker counts")
def test_golden_run(tmp_path, record_property):
    t0 = time.perf_counter()
    outputs = []
    for name, workers in (("a", 1), ("b", 1), ("c", 4)):
        out = tmp_path / name
        assert main(["run", "--config", str(FIXTURE_CONFIG), "--workers", str(workers), "--output", str(out)]) == 0
        outputs.append((out / "records.csv").read_bytes())
    elapsed = time.perf_counter() - t0
    rows = outputs[0].count(b"\n") - 1
    detail(record_property, f"3 runs in {elapsed:.1f}s, {rows} records")
    assert outputs[0] == outputs[1] == outputs[2]
    assert outputs[0].count(b"\n") == 9
    assert elapsed < 600
