"""Stage 1: one masked graph autoencoder per augmentation level.

node branch      encoder + attribute decoder, loss Σ_k ‖X_k − X̂_k‖²
edge branch      encoder + structure decoder, loss Σ_k ‖A_k − Â_k‖²
subgraph branch  encoder + both decoders, loss is the sum of the two terms
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import nn
from .augment import AugmentedGraph, AugmentedGraphSet
from .graph import Graph
from .seeding import derive

log = logging.getLogger(__name__)

LEVELS = ("node", "edge", "subgraph")


@dataclass(frozen=True)
class ArchitectureConfig:
    embedding_dim: int = 12
    encoder_depth: int = 2
    decoder_depth: int = 1
    encoder_kind: str = "gcn"
    dropout: float = 0.1

    def __post_init__(self):
        if self.encoder_kind not in ("gcn", "gat"):
            raise ValueError(f"encoder_kind must be 'gcn' or 'gat', got {self.encoder_kind!r}")
        if self.embedding_dim < 1 or self.encoder_depth < 0 or self.decoder_depth < 0:
            raise ValueError("embedding_dim must be >= 1 and depths >= 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 0.005
    weight_decay: float = 0.01
    target: str = "masked"

    def __post_init__(self):
        if self.target not in ("masked", "original"):
            raise ValueError("target must be 'masked' or 'original'")


class Encoder(nn.Module):
    """Stacked GNN layers, rectifier after every layer; depth 0 is the identity."""

    def __init__(self, in_dim: int, arch: ArchitectureConfig, rng: np.random.Generator):
        layer_cls = nn.GATConv if arch.encoder_kind == "gat" else nn.GCNConv
        dims = [in_dim] + [arch.embedding_dim] * arch.encoder_depth
        self.layers = [layer_cls(a, b, rng, activation=nn.relu) for a, b in zip(dims[:-1], dims[1:])]
        self.dropout = arch.dropout
        self.out_dim = dims[-1]

    def __call__(self, ctx, x, training=False, rng=None):
        h = x if sp.issparse(x) else nn.as_tensor(x)
        for layer in self.layers:
            h = layer(ctx, nn.dropout(h, self.dropout, rng, training))
        return h


class _GCNStack(nn.Module):
    def __init__(self, dims, rng, dropout):
        n_layers = len(dims) - 1
        self.layers = [
            nn.GCNConv(a, b, rng, activation=nn.relu if i < n_layers - 1 else None)
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
        ]
        self.dropout = dropout

    def __call__(self, ctx, h, training=False, rng=None):
        h = nn.as_tensor(h)
        for layer in self.layers:
            h = layer(ctx, nn.dropout(h, self.dropout, rng, training))
        return h


class AttributeDecoder(_GCNStack):
    """GCN stack ending in a linear head of width d."""

    def __init__(self, emb_dim, out_dim, depth, rng, dropout=0.0):
        super().__init__([emb_dim] * depth + [out_dim] if depth else [emb_dim], rng, dropout)


class StructureDecoder(_GCNStack):
    """GCN stack producing Z, then Â = logistic(Z Zᵀ)."""

    def __init__(self, emb_dim, depth, rng, dropout=0.0):
        super().__init__([emb_dim] * (depth + 1), rng, dropout)

    def __call__(self, ctx, h, training=False, rng=None):
        z = super().__call__(ctx, h, training, rng)
        return nn.gram_sigmoid(z)


class AutoencoderBranch(nn.Module):
    def __init__(self, level: str, in_dim: int, arch: ArchitectureConfig, rng: np.random.Generator):
        if level not in LEVELS:
            raise ValueError(f"unknown level {level!r}")
        self.level = level
        self.arch = arch
        self.encoder = Encoder(in_dim, arch, rng)
        emb = self.encoder.out_dim
        self.attr_decoder = AttributeDecoder(emb, in_dim, arch.decoder_depth, rng, arch.dropout) if level != "edge" else None
        self.struct_decoder = StructureDecoder(emb, arch.decoder_depth, rng, arch.dropout) if level != "node" else None

    def encode(self, ctx, x, training=False, rng=None):
        return self.encoder(ctx, x, training, rng)


def build_branch(level: str, in_dim: int, arch: ArchitectureConfig, seed: int) -> AutoencoderBranch:
    return AutoencoderBranch(level, in_dim, arch, derive(seed, "init", level))


def reconstruct_attributes(branch: AutoencoderBranch, aug: AugmentedGraph | Graph, ctx=None) -> np.ndarray:
    if branch.attr_decoder is None:
        raise ValueError(f"{branch.level} branch has no attribute decoder")
    g = aug.graph if isinstance(aug, AugmentedGraph) else aug
    ctx = ctx or nn.GraphContext(g.n, g.edges)
    return branch.attr_decoder(ctx, branch.encode(ctx, nn.input_matrix(g.attributes))).data


def reconstruct_structure(branch: AutoencoderBranch, aug: AugmentedGraph | Graph, ctx=None) -> np.ndarray:
    if branch.struct_decoder is None:
        raise ValueError(f"{branch.level} branch has no structure decoder")
    g = aug.graph if isinstance(aug, AugmentedGraph) else aug
    ctx = ctx or nn.GraphContext(g.n, g.edges)
    return branch.struct_decoder(ctx, branch.encode(ctx, nn.input_matrix(g.attributes))).data


def member_loss(
    branch, aug: AugmentedGraph, ctx, original: Graph | None = None, training=False, rng=None, inputs=None
):
    """Loss terms of one collection member: {'attr': Tensor, 'struct': Tensor} as applicable.

    Attribute targets are the masked X_k unless ``original`` is given, in which
    case the clean attributes are used instead. ``inputs`` is a precomputed
    ``nn.input_matrix`` of the member's attributes.
    """
    g = aug.graph
    h = branch.encode(ctx, nn.input_matrix(g.attributes) if inputs is None else inputs, training, rng)
    terms = {}
    if branch.attr_decoder is not None:
        x_target = original.attributes if original is not None else g.attributes
        terms["attr"] = nn.frobenius_sq(branch.attr_decoder(ctx, h, training, rng), x_target)
    if branch.struct_decoder is not None:
        terms["struct"] = nn.frobenius_sq(branch.struct_decoder(ctx, h, training, rng), ctx.dense_adjacency())
    return terms


def _collection_loss(branch, collection: AugmentedGraphSet, original=None, prepared=None) -> dict:
    totals = {}
    for i, aug in enumerate(collection.graphs):
        ctx, inputs = prepared[i] if prepared else (nn.GraphContext(aug.graph.n, aug.graph.edges), None)
        for k, t in member_loss(branch, aug, ctx, original, inputs=inputs).items():
            totals[k] = totals.get(k, 0.0) + float(t.data)
    return totals


def node_level_loss(branch, collection: AugmentedGraphSet, original=None) -> float:
    return _collection_loss(branch, collection, original)["attr"]


def edge_level_loss(branch, collection: AugmentedGraphSet) -> float:
    return _collection_loss(branch, collection)["struct"]


def subgraph_level_loss(branch, collection: AugmentedGraphSet, original=None) -> float:
    t = _collection_loss(branch, collection, original)
    return t["attr"] + t["struct"]


def collection_loss(branch, collection: AugmentedGraphSet, original=None, prepared=None) -> float:
    return sum(_collection_loss(branch, collection, original, prepared).values())


@dataclass
class BranchReport:
    level: str
    losses: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def pretrain_branch(
    branch: AutoencoderBranch,
    collection: AugmentedGraphSet,
    train: TrainConfig,
    seed: int,
    original: Graph | None = None,
) -> BranchReport:
    """One optimizer step per full pass over the collection.

    Gradients are accumulated member by member, which equals the gradient of
    the summed collection loss while holding one n×n matrix at a time.
    """
    target_graph = original if train.target == "original" else None
    rng = derive(seed, "dropout", "pretrain", branch.level)
    opt = nn.Adam(branch.parameters(), lr=train.lr, weight_decay=train.weight_decay)
    prepared = [(nn.GraphContext(a.graph.n, a.graph.edges), nn.input_matrix(a.graph.attributes)) for a in collection.graphs]
    report = BranchReport(branch.level)
    report.initial_loss = collection_loss(branch, collection, target_graph, prepared)
    for epoch in range(train.epochs):
        opt.zero_grad()
        total = 0.0
        for aug, (ctx, inputs) in zip(collection.graphs, prepared):
            terms = member_loss(branch, aug, ctx, target_graph, training=True, rng=rng, inputs=inputs)
            loss = terms["attr"] + terms["struct"] if len(terms) == 2 else next(iter(terms.values()))
            loss.backward()
            total += float(loss.data)
        if not np.isfinite(total):
            raise nn.NonFiniteError(f"non-finite pretraining loss: branch '{branch.level}', epoch {epoch}")
        opt.step()
        report.losses.append(total)
        log.debug("pretrain %s epoch %d loss %.6g", branch.level, epoch, total)
    report.final_loss = collection_loss(branch, collection, target_graph, prepared)
    return report


def pretrain_all(
    g: Graph,
    sets: dict[str, AugmentedGraphSet],
    arch: ArchitectureConfig,
    train: TrainConfig,
    seed: int,
) -> tuple[dict[str, AutoencoderBranch], dict[str, BranchReport]]:
    """Train each level's branch independently on its own collection."""
    branches, reports = {}, {}
    for level, collection in sets.items():
        if not collection.graphs:
            raise ValueError(f"empty collection for level '{level}'")
        branch = build_branch(level, g.d, arch, seed)
        reports[level] = pretrain_branch(branch, collection, train, seed, original=g.unlabeled())
        branches[level] = branch
    return branches, reports


def report_dict(reports: dict[str, BranchReport]) -> dict:
    return {k: asdict(v) for k, v in reports.items()}
