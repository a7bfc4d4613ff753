import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adagad import nn
from adagad.augment import AugmentationConfig, build_collections
from adagad.detect import (
    AggregationModule,
    AnomalyScores,
    DetectionConfig,
    DetectionModel,
    anomaly_scores,
    flag_anomalies,
    node_anomaly_distribution,
    reconstruction_loss,
    regularization_loss,
    regularization_terms,
    retrain,
    score_tensor,
)
from adagad.graph import Graph
from adagad.pretrain import ArchitectureConfig, TrainConfig, build_branch, pretrain_all

from conftest import random_graph, star_graph

ARCH = ArchitectureConfig(embedding_dim=12, encoder_depth=2, decoder_depth=1)
LEVELS = ("node", "edge", "subgraph")


@pytest.fixture(scope="module")
def pretrained(small_graph):
    sets = build_collections(small_graph.unlabeled(), AugmentationConfig(seed=0, l_n=3, l_e=3, l_s=3))
    branches, _ = pretrain_all(small_graph, sets, ARCH, TrainConfig(epochs=5), seed=0)
    return branches


def fresh_model(pretrained, seed=0, levels=LEVELS, **cfg):
    """Detection model over copies of the pretrained branches (freezing mutates flags)."""
    copies = []
    for lv in levels:
        b = build_branch(lv, pretrained[lv].encoder.layers[0].weight.shape[0], ARCH, 0)
        b.load_state_dict(pretrained[lv].state_dict())
        copies.append(b)
    d = copies[0].encoder.layers[0].weight.shape[0]
    return DetectionModel(copies, d, DetectionConfig(**cfg), seed)


# ---------------------------------------------------------------- aggregation


def _embs(seed=0, n=5, h=4):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(n, h)) for _ in range(3)]


def test_fixed_one_hot_selects_first():
    e = _embs()
    agg = AggregationModule("fixed_linear", 4, 3, np.random.default_rng(0), fixed_weights=(1.0, 0.0, 0.0))
    assert np.array_equal(agg(e).data, e[0])


def test_fixed_weight_validation():
    with pytest.raises(ValueError):
        AggregationModule("fixed_linear", 4, 3, np.random.default_rng(0), fixed_weights=(0.5, 0.6, 0.0))
    with pytest.raises(ValueError):
        AggregationModule("mean", 4, 3, np.random.default_rng(0))


@pytest.mark.parametrize("mode", ["vector", "scalar"])
def test_constant_attention_is_mean(mode):
    e = _embs()
    agg = AggregationModule("attention", 4, 3, np.random.default_rng(0), attention_mode=mode)
    agg.fc.weight.data[:] = 0.0
    assert np.allclose(agg(e).data, (e[0] + e[1] + e[2]) / 3, atol=1e-12)


def test_learnable_starts_uniform_and_sums_to_one():
    e = _embs()
    agg = AggregationModule("learnable_linear", 4, 3, np.random.default_rng(0))
    assert np.allclose(agg(e).data, sum(e) / 3)
    for p, v in zip(agg.logits, (2.0, -1.0, 0.3)):
        p.data[:] = v
    w = [t.data.item() for t in agg.weights(e)]
    assert sum(w) == pytest.approx(1.0, abs=1e-12) and min(w) > 0


def test_single_level_is_identity():
    e = _embs()[:1]
    agg = AggregationModule("attention", 4, 1, np.random.default_rng(0))
    assert np.array_equal(agg(e).data, e[0])


def test_shape_mismatch():
    agg = AggregationModule("attention", 4, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        agg([np.zeros((5, 4)), np.zeros((5, 4)), np.zeros((4, 4))])
    with pytest.raises(ValueError):
        agg(_embs()[:2])


@given(st.integers(0, 10_000), st.sampled_from(["vector", "scalar"]), st.floats(0.1, 50))
def test_attention_convex(seed, mode, scale):
    e = [x * scale for x in _embs(seed)]
    agg = AggregationModule("attention", 4, 3, np.random.default_rng(seed), attention_mode=mode)
    w = np.broadcast_arrays(*[t.data for t in agg.weights([nn.Tensor(x) for x in e])], e[0])[:3]
    assert np.allclose(sum(w), 1.0, atol=1e-6)
    h = agg(e).data
    lo, hi = np.minimum.reduce(e), np.maximum.reduce(e)
    assert np.all(h >= lo - 1e-6) and np.all(h <= hi + 1e-6)


# ---------------------------------------------------------------- scores and losses


def test_scores_perfect_reconstruction():
    a = np.eye(4)[[1, 0, 3, 2]]
    x = np.random.default_rng(0).normal(size=(4, 2))
    assert not score_tensor(a, a, x, x, 0.5, 0.5).data.any()


def test_score_localization():
    a = random_graph(8, 0.4, 1, 0).dense_adjacency()
    a_hat = a.copy()
    a_hat[3, :] = 1 - a_hat[3, :]
    a_hat[:, 3] = 1 - a_hat[:, 3]
    x = np.zeros((8, 2))
    s = score_tensor(a, a_hat, x, x, 1.0, 0.0).data.ravel()
    assert int(np.argmax(s)) == 3


def test_squared_scores_match_loss_at_extremes(pretrained, small_graph):
    for gamma in (0.0, 1.0):
        model = fresh_model(pretrained, gamma=gamma)
        rec = model.reconstruct(small_graph)
        s = model.score(small_graph).scores
        assert np.sum(s**2) == pytest.approx(rec.l_rec, rel=1e-9)


def test_reconstruction_loss_oracle(pretrained, small_graph):
    model = fresh_model(pretrained, gamma=0.3)
    rec = model.reconstruct(small_graph)
    l_rs = np.sum((small_graph.dense_adjacency() - rec.a_hat) ** 2)
    l_ra = np.sum((small_graph.attributes - rec.x_hat) ** 2)
    l_rec, ra, rs = reconstruction_loss(model, small_graph)
    assert rs == pytest.approx(l_rs, rel=1e-9) and ra == pytest.approx(l_ra, rel=1e-9)
    assert l_rec == pytest.approx(0.7 * l_rs + 0.3 * l_ra, rel=1e-9)
    model1 = fresh_model(pretrained, gamma=1.0)
    r1 = model1.reconstruct(small_graph)
    assert r1.l_rec == r1.l_ra
    # the swapped reading puts gamma on the structure term
    swapped = fresh_model(pretrained, gamma=0.3, swap_rec_weights=True)
    r = swapped.reconstruct(small_graph)
    assert r.l_rec == pytest.approx(0.3 * r.l_rs + 0.7 * r.l_ra, rel=1e-12)


def test_distribution_examples():
    # closed neighborhoods on a 4-cycle all have size 3
    cyc = Graph(4, [(0, 1), (1, 2), (2, 3), (0, 3)], np.ones((4, 1)))
    assert np.allclose(node_anomaly_distribution(np.full(4, 0.7), cyc, 0.5), 1 / 3)
    iso = Graph(3, np.zeros((0, 2)), np.ones((3, 1)))
    assert np.array_equal(node_anomaly_distribution([0.1, 2.0, 5.0], iso, 0.5), np.ones(3))
    assert regularization_loss([0.1, 2.0, 5.0], iso, 0.5) == 0.0


def test_quarter_gives_closed_form():
    # star with three leaves and equal scores: the center's closed neighborhood has 4 nodes
    g = star_graph(3)
    s = nn.Tensor(np.ones((4, 1)))
    nb = nn.GraphContext(g.n, g.edges).closed_neighborhood_matrix()
    dist, ent, _ = regularization_terms(s, nb, 0.5)
    assert dist.data[0, 0] == 0.25
    assert ent.data[0, 0] == pytest.approx(0.25 * math.log(4), abs=1e-12)
    assert ent.data[0, 0] == pytest.approx(0.34657, abs=1e-5)


def test_small_tau_limit():
    g = random_graph(12, 0.3, 1, 4)
    s = np.random.default_rng(0).uniform(0.01, 10, size=12)
    a = node_anomaly_distribution(s, g, 1e-4)
    sizes = g.degrees() + 1
    assert np.allclose(a, 1 / sizes, rtol=1e-3)


@given(st.lists(st.floats(0.0, 1e6), min_size=6, max_size=6), st.floats(1e-3, 0.999))
def test_clamp_safety(scores, tau):
    g = random_graph(6, 0.5, 1, 0)
    nb = nn.GraphContext(g.n, g.edges).closed_neighborhood_matrix()
    dist, ent, reg = regularization_terms(nn.Tensor(np.array(scores).reshape(-1, 1)), nb, tau)
    for t in (dist, ent, reg):
        assert np.all(np.isfinite(t.data))
    assert np.all((dist.data > 0) & (dist.data <= 1))


def test_all_zero_scores_are_safe():
    g = random_graph(6, 0.5, 1, 0)
    assert math.isfinite(regularization_loss(np.zeros(6), g, 0.5))


def test_config_validation():
    for bad in ({"tau": 1.0}, {"tau": 0.0}, {"gamma": 1.5}, {"gamma_reg": -1}, {"aggregation": "max"}):
        with pytest.raises(ValueError):
            DetectionConfig(**bad)


# ---------------------------------------------------------------- flags


def test_flag_examples():
    assert flag_anomalies([0.1, 0.9, 0.3, 0.2], 0.25).tolist() == [1]
    assert flag_anomalies(np.ones(5), 0.4).tolist() == [0, 1]
    assert len(flag_anomalies(np.random.default_rng(0).random(124), 0.048)) == 6
    with pytest.raises(ValueError):
        flag_anomalies([1.0, 2.0], 1.0)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=40), st.floats(0.01, 0.99))
def test_flag_properties(raw, rate):
    s = np.array(raw, dtype=float)
    flags = flag_anomalies(s, rate)
    assert len(flags) == math.floor(rate * len(s) + 0.5)
    if len(flags) and len(flags) < len(s):
        rest = np.setdiff1d(np.arange(len(s)), flags)
        assert s[flags].min() >= s[rest].max()
        # ties at the cutoff go to the smallest ids
        cut = s[flags].min()
        tied_out = rest[s[rest] == cut]
        tied_in = flags[s[flags] == cut]
        assert not len(tied_out) or tied_in.max() < tied_out.min()
    sc = AnomalyScores.from_scores(s, rate)
    assert sorted(sc.ranking.tolist()) == list(range(len(s)))
    assert sc.flagged.sum() == len(flags)


def test_scaling_preserves_ranking():
    a = random_graph(10, 0.3, 1, 0).dense_adjacency()
    rng = np.random.default_rng(1)
    a_hat, x, x_hat = rng.random((10, 10)), rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    s1 = score_tensor(a, a_hat, x, x_hat, 0.5, 0.5).data.ravel()
    s2 = score_tensor(3 * a, 3 * a_hat, 3 * x, 3 * x_hat, 0.5, 0.5).data.ravel()
    r1, r2 = AnomalyScores.from_scores(s1, 0.2), AnomalyScores.from_scores(s2, 0.2)
    assert np.array_equal(r1.ranking, r2.ranking) and np.array_equal(r1.flagged, r2.flagged)


# ---------------------------------------------------------------- retraining


def test_retrain_freezes_encoders(pretrained, small_graph):
    model = fresh_model(pretrained)
    before = {k: v.copy() for k, v in model.encoder_state().items()}
    report = retrain(model, small_graph, seed=0)
    after = model.encoder_state()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert len(report.losses) == 20 and np.all(np.isfinite(report.losses))
    assert report.losses[-1] < report.losses[0]
    assert all(p.frozen for e in model.encoders for p in e.parameters())
    assert not any(p.frozen for p in model.trainable_parameters())


def test_zero_regularizer_weight_is_bit_exact(pretrained, small_graph):
    with_reg = fresh_model(pretrained, gamma_reg=0.0)
    without = fresh_model(pretrained, gamma_reg=0.0)
    r1 = retrain(with_reg, small_graph, seed=3, with_regularizer=True)
    r2 = retrain(without, small_graph, seed=3, with_regularizer=False)
    assert r1.losses == r2.losses
    assert nn.state_digest(with_reg.state_dict()) == nn.state_digest(without.state_dict())
    assert np.array_equal(with_reg.score(small_graph).scores, without.score(small_graph).scores)
    assert r2.reg_losses == []


def test_regularizer_changes_training(pretrained, small_graph):
    a = fresh_model(pretrained, gamma_reg=0.0)
    b = fresh_model(pretrained, gamma_reg=1.0)
    retrain(a, small_graph, seed=0)
    retrain(b, small_graph, seed=0)
    assert not np.array_equal(a.score(small_graph).scores, b.score(small_graph).scores)


def test_single_level_model(pretrained, small_graph):
    model = fresh_model(pretrained, levels=("node",))
    retrain(model, small_graph, seed=0)
    s = anomaly_scores(model, small_graph, 0.05)
    assert s.scores.shape == (small_graph.n,) and np.all(s.scores >= 0)
    assert s.flagged.sum() == 6
