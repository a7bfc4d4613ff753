"""Central finite-difference gradient checks for the autograd engine."""
from __future__ import annotations

import numpy as np

STEP = 1e-5


def relative_errors(loss_fn, params) -> np.ndarray:
    """Per-coordinate |analytic − numeric| / max(|analytic|, |numeric|, floor).

    ``floor`` is 1e-7 or 1e-6 of the largest analytic gradient entry, whichever
    is larger, so coordinates whose true gradient is exactly zero (for example
    a bias that every softmax input shares) are judged against the gradient's
    scale rather than against rounding noise. ``loss_fn`` rebuilds the graph
    from the current parameter values and returns a scalar Tensor.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    floor = max(1e-7, 1e-6 * max(float(np.abs(a).max()) for a in analytic))
    errs = []
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + STEP
            up = float(loss_fn().data)
            flat[i] = orig - STEP
            down = float(loss_fn().data)
            flat[i] = orig
            num = (up - down) / (2 * STEP)
            ai = a.reshape(-1)[i]
            errs.append(abs(ai - num) / max(abs(ai), abs(num), floor))
    return np.array(errs)


def check(loss_fn, params, rel=1e-4, frac=0.95, worst=1e-3) -> tuple[bool, float, float]:
    """(passed, share of coordinates within ``rel``, worst error)."""
    errs = relative_errors(loss_fn, params)
    share = float(np.mean(errs <= rel))
    top = float(errs.max())
    return share >= frac and top <= worst, share, top


# ----------------------------------------------------------------------------
# the layer and loss paths checked by the suite


def _graph(n=8, d=3, seed=0):
    from conftest import random_graph

    return random_graph(n, 0.35, d, seed)


def _weighted_sum(out, rng):
    from adagad import nn

    r = nn.Tensor(rng.normal(size=out.shape))
    return nn.reduce_sum(nn.mul(out, r))


def case_gcn(seed=0):
    from adagad import nn

    rng = np.random.default_rng(seed)
    g = _graph(seed=seed)
    ctx = nn.GraphContext(g.n, g.edges)
    layer = nn.GCNConv(g.d, 4, rng, activation=nn.sigmoid)
    h = nn.parameter(rng.normal(size=(g.n, g.d)), "h")
    r = np.random.default_rng(seed + 1)
    out_w = r.normal(size=(g.n, 4))
    return (lambda: nn.reduce_sum(nn.mul(layer(ctx, h), nn.Tensor(out_w)))), layer.parameters() + [h]


def case_gcn_widening(seed=0):
    from adagad import nn

    rng = np.random.default_rng(seed)
    g = _graph(seed=seed)
    ctx = nn.GraphContext(g.n, g.edges)
    layer = nn.GCNConv(g.d, 6, rng, activation=nn.relu)
    h = nn.parameter(rng.normal(size=(g.n, g.d)), "h")
    out_w = rng.normal(size=(g.n, 6))
    return (lambda: nn.reduce_sum(nn.mul(layer(ctx, h), nn.Tensor(out_w)))), layer.parameters() + [h]


def case_gat(seed=0):
    from adagad import nn

    rng = np.random.default_rng(seed)
    g = _graph(seed=seed)
    ctx = nn.GraphContext(g.n, g.edges)
    layer = nn.GATConv(g.d, 4, rng, activation=nn.sigmoid)
    h = nn.parameter(rng.normal(size=(g.n, g.d)), "h")
    out_w = rng.normal(size=(g.n, 4))
    return (lambda: nn.reduce_sum(nn.mul(layer(ctx, h), nn.Tensor(out_w)))), layer.parameters() + [h]


def case_dense(seed=0):
    from adagad import nn

    rng = np.random.default_rng(seed)
    layer = nn.Linear(5, 3, rng, activation=nn.sigmoid)
    h = nn.parameter(rng.normal(size=(7, 5)), "h")
    out_w = rng.normal(size=(7, 3))
    return (lambda: nn.reduce_sum(nn.mul(layer(h), nn.Tensor(out_w)))), layer.parameters() + [h]


def _aggregation(strategy, mode="vector", seed=0):
    from adagad import nn
    from adagad.detect import AggregationModule

    rng = np.random.default_rng(seed)
    agg = AggregationModule(strategy, 4, 3, rng, None, mode)
    if strategy == "learnable_linear":
        for p in agg.logits:
            p.data = rng.normal(size=(1, 1))
    embs = [nn.parameter(rng.normal(size=(6, 4)), f"e{i}") for i in range(3)]
    out_w = rng.normal(size=(6, 4))
    return (lambda: nn.reduce_sum(nn.mul(agg(embs), nn.Tensor(out_w)))), agg.parameters() + embs


def case_aggregation_fixed(seed=0):
    return _aggregation("fixed_linear", seed=seed)


def case_aggregation_learnable(seed=0):
    return _aggregation("learnable_linear", seed=seed)


def case_aggregation_attention(seed=0):
    return _aggregation("attention", seed=seed)


def case_aggregation_attention_scalar(seed=0):
    return _aggregation("attention", "scalar", seed=seed)


def _detection_model(seed=0, **cfg):
    from adagad import nn
    from adagad.detect import DetectionConfig, DetectionModel
    from adagad.pretrain import ArchitectureConfig, build_branch

    g = _graph(n=9, d=3, seed=seed)
    arch = ArchitectureConfig(embedding_dim=4, encoder_depth=1, decoder_depth=1, dropout=0.0)
    branches = [build_branch(lv, g.d, arch, seed) for lv in ("node", "edge", "subgraph")]
    model = DetectionModel(branches, g.d, DetectionConfig(dropout=0.0, **cfg), seed)
    ctx = nn.GraphContext(g.n, g.edges)
    embs = model.embeddings(ctx, g.attributes)
    return model, ctx, embs, g


def case_reconstruction(seed=0):
    model, ctx, embs, g = _detection_model(seed, gamma=0.3)
    return (lambda: model.objective(ctx, embs, g, with_regularizer=False)[0]), model.trainable_parameters()


def case_full_objective(seed=0):
    model, ctx, embs, g = _detection_model(seed, gamma=0.3, gamma_reg=0.5, tau=0.4)
    return (lambda: model.objective(ctx, embs, g)[0]), model.trainable_parameters()


def case_regularizer(seed=0):
    from adagad import nn
    from adagad.detect import regularization_terms

    rng = np.random.default_rng(seed)
    g = _graph(seed=seed)
    nb = nn.GraphContext(g.n, g.edges).closed_neighborhood_matrix()
    s = nn.parameter(rng.uniform(0.2, 2.0, size=(g.n, 1)), "scores")
    return (lambda: regularization_terms(s, nb, 0.5)[2]), [s]


def case_pretrain_subgraph(seed=0):
    from adagad import nn
    from adagad.augment import AugmentationConfig, subgraph_mask
    from adagad.pretrain import ArchitectureConfig, build_branch, member_loss

    g = _graph(n=9, d=3, seed=seed)
    aug = subgraph_mask(g, AugmentationConfig(walks=1, walk_length=2), np.random.default_rng(seed))
    arch = ArchitectureConfig(embedding_dim=4, encoder_depth=2, decoder_depth=1, dropout=0.0)
    branch = build_branch("subgraph", g.d, arch, seed)
    ctx = nn.GraphContext(aug.graph.n, aug.graph.edges)

    def loss():
        t = member_loss(branch, aug, ctx)
        return nn.add(t["attr"], t["struct"])

    return loss, branch.parameters()


CASES = {
    "gcn": case_gcn,
    "gcn_widening": case_gcn_widening,
    "gat": case_gat,
    "dense": case_dense,
    "aggregation_fixed": case_aggregation_fixed,
    "aggregation_learnable": case_aggregation_learnable,
    "aggregation_attention": case_aggregation_attention,
    "aggregation_attention_scalar": case_aggregation_attention_scalar,
    "reconstruction_loss": case_reconstruction,
    "regularizer": case_regularizer,
    "full_objective": case_full_objective,
    "pretrain_subgraph": case_pretrain_subgraph,
}
