"""Anomaly-denoised augmentation: masking plus rejection sampling on G_ano.

Every random draw comes from a stream keyed by (seed, level, purpose, trial
index), so collections are identical for any number of worker threads.

Candidates are first screened with an incremental G_ano update (only the
masked rows and incident edges change); a candidate that passes the screen
is materialized as a Graph and its G_ano recomputed from scratch, and that
exact value is what the gate and the recorded ``g_ano`` use.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import Graph
from .spectral import DegenerateSignalError, graph_anomaly_magnitude

LEVELS = ("node", "edge", "subgraph")
_LEVEL_CODE = {"node": 1, "edge": 2, "subgraph": 3}
_PURPOSE_CODE = {"calibrate": 1, "collect": 2}
# screen slack; the exact recomputation decides acceptance
_SCREEN_RTOL = 1e-8


class AugmentationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AugmentationConfig:
    p_r: float = 1.0
    p_z: float = 0.1
    q: float = 1.0
    node_mask_count: int = 2
    edge_mask_count: int = 10
    walks: int = 2
    walk_length: int = 2
    l_n: int = 10
    l_e: int = 10
    l_s: int = 10
    n_aug: int = 30
    max_trials: int = 200
    theta_relax: float = 1.02
    max_relaxations: int = 10
    shared_theta: bool = False
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("p_r", "p_z", "q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("node_mask_count", "edge_mask_count", "l_n", "l_e", "l_s", "n_aug", "max_trials", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.walks < 0 or self.walk_length < 0:
            raise ValueError("walks and walk_length must be >= 0")
        if self.theta_relax < 1.0:
            raise ValueError("theta_relax must be >= 1")

    def target_size(self, level: str) -> int:
        return {"node": self.l_n, "edge": self.l_e, "subgraph": self.l_s}[level]


@dataclass(frozen=True, eq=False)
class AugmentedGraph:
    graph: Graph
    level: str
    masked_nodes: np.ndarray
    masked_edges: np.ndarray
    g_ano: float

    def provenance(self) -> dict:
        return {
            "level": self.level,
            "g_ano": self.g_ano,
            "masked_nodes": self.masked_nodes.tolist(),
            "masked_edges": self.masked_edges.tolist(),
        }


@dataclass(frozen=True, eq=False)
class AugmentedGraphSet:
    level: str
    threshold_theta: float
    graphs: list[AugmentedGraph] = field(default_factory=list)
    trials: int = 0
    relaxations: int = 0

    @property
    def gated(self) -> bool:
        return math.isfinite(self.threshold_theta)

    def mean_g_ano(self) -> float:
        return float(np.mean([a.g_ano for a in self.graphs]))


def stream(seed: int, level: str, purpose: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _LEVEL_CODE[level], _PURPOSE_CODE[purpose], index]))


# ----------------------------------------------------------------------------
# proposals


@dataclass(frozen=True, eq=False)
class _Proposal:
    level: str
    nodes: np.ndarray  # masked node ids, sorted
    rows: np.ndarray  # replacement attribute rows, aligned with ``nodes``
    removed: np.ndarray  # removed edge row indices into g.edges, sorted


class _Index:
    """Per-graph lookup tables shared by all proposals on that graph."""

    def __init__(self, g: Graph):
        self.g = g
        u, v = g.edges[:, 0], g.edges[:, 1]
        rows = np.arange(g.m)
        self.incidence = sp.csr_matrix(
            (np.ones(2 * g.m, dtype=np.int8), (np.concatenate([u, v]), np.concatenate([rows, rows]))),
            shape=(g.n, g.m),
        )
        self.edge_row = {(int(a), int(b)): r for r, (a, b) in enumerate(g.edges)}
        x = g.attributes
        diff = x[u] - x[v]
        self.edge_sq = np.einsum("ij,ij->i", diff, diff)
        self.row_sq = np.einsum("ij,ij->i", x, x)
        self.edge_total = float(self.edge_sq.sum())
        self.row_total = float(self.row_sq.sum())
        self.deg = g.degrees().astype(np.float64)

    def incident_edges(self, nodes) -> np.ndarray:
        if len(nodes) == 0:
            return np.zeros(0, dtype=np.int64)
        sub = self.incidence[nodes]
        return np.unique(sub.indices).astype(np.int64)

    def screen(self, p: _Proposal) -> float:
        """Incremental G_ano of a proposal; +inf when degenerate."""
        g = self.g
        keep = np.ones(g.m, dtype=bool)
        keep[p.removed] = False
        if not keep.any():
            return math.inf
        num = self.edge_total - float(self.edge_sq[p.removed].sum())
        den = self.row_total
        if len(p.nodes):
            touched = self.incident_edges(p.nodes)
            touched = touched[keep[touched]]
            num -= float(self.edge_sq[touched].sum())
            new = {int(i): r for i, r in zip(p.nodes, p.rows)}
            x = g.attributes
            for e in touched:
                a, b = int(g.edges[e, 0]), int(g.edges[e, 1])
                diff = new.get(a, x[a]) - new.get(b, x[b])
                num += float(diff @ diff)
            den += float(np.einsum("ij,ij->", p.rows, p.rows)) - float(self.row_sq[p.nodes].sum())
        if den <= 0.0:
            return math.inf
        deg = self.deg.copy()
        if len(p.removed):
            np.subtract.at(deg, g.edges[p.removed].ravel(), 1.0)
        e = g.edges[keep]
        dd = deg[e[:, 0]] - deg[e[:, 1]]
        return num / den + float(dd @ dd) / float(deg @ deg)

    def materialize(self, p: _Proposal) -> AugmentedGraph:
        g = self.g
        x = g.attributes
        if len(p.nodes):
            x = np.array(g.attributes)
            x[p.nodes] = p.rows
        keep = np.ones(g.m, dtype=bool)
        keep[p.removed] = False
        out = Graph(g.n, g.edges[keep], x)
        try:
            g_ano = graph_anomaly_magnitude(out).graph_magnitude
        except DegenerateSignalError:
            g_ano = math.inf
        return AugmentedGraph(out, p.level, p.nodes, g.edges[p.removed].reshape(-1, 2), g_ano)


def _replacement_rows(g: Graph, nodes: np.ndarray, p_z: float, rng: np.random.Generator) -> np.ndarray:
    """Each masked row takes a uniformly chosen other node's row, then is zeroed with prob p_z."""
    rows = np.empty((len(nodes), g.d))
    for k, i in enumerate(nodes):
        j = int(rng.integers(g.n - 1))
        if j >= i:
            j += 1
        rows[k] = g.attributes[j]
        if rng.random() < p_z:
            rows[k] = 0.0
    return rows


def _propose_node(idx: _Index, cfg: AugmentationConfig, rng) -> _Proposal:
    g = idx.g
    k = min(cfg.node_mask_count, g.n)
    candidates = rng.choice(g.n, size=k, replace=False)
    admitted = candidates[rng.random(k) < cfg.p_r]
    rows = _replacement_rows(g, admitted, cfg.p_z, rng)
    order = np.argsort(admitted)
    return _Proposal("node", admitted[order].astype(np.int64), rows[order], np.zeros(0, dtype=np.int64))


def _propose_edge(idx: _Index, cfg: AugmentationConfig, rng) -> _Proposal:
    g = idx.g
    k = min(cfg.edge_mask_count, g.m)
    candidates = rng.choice(g.m, size=k, replace=False)
    removed = np.sort(candidates[rng.random(k) < cfg.q]).astype(np.int64)
    return _Proposal("edge", np.zeros(0, dtype=np.int64), np.zeros((0, g.d)), removed)


def random_walks(g: Graph, walks: int, walk_length: int, rng: np.random.Generator, edge_row=None):
    """Visited node ids and traversed edge rows (indices into ``g.edges``), both sorted."""
    if edge_row is None and walk_length:
        edge_row = {(int(a), int(b)): r for r, (a, b) in enumerate(g.edges)}
    visited: set[int] = set()
    traversed: set[int] = set()
    for _ in range(walks):
        cur = int(rng.integers(g.n))
        visited.add(cur)
        for _ in range(walk_length):
            nbrs = g.neighbors(cur)
            if len(nbrs) == 0:
                break
            nxt = int(nbrs[rng.integers(len(nbrs))])
            traversed.add(edge_row[(min(cur, nxt), max(cur, nxt))])
            visited.add(nxt)
            cur = nxt
    return np.array(sorted(visited), dtype=np.int64), np.array(sorted(traversed), dtype=np.int64)


def _propose_subgraph(idx: _Index, cfg: AugmentationConfig, rng) -> _Proposal:
    g = idx.g
    nodes, edge_rows = random_walks(g, cfg.walks, cfg.walk_length, rng, idx.edge_row)
    admitted = nodes[rng.random(len(nodes)) < cfg.p_r]
    rows = _replacement_rows(g, admitted, cfg.p_z, rng)
    removed = edge_rows[rng.random(len(edge_rows)) < cfg.q]
    return _Proposal("subgraph", admitted, rows, removed)


_PROPOSERS = {"node": _propose_node, "edge": _propose_edge, "subgraph": _propose_subgraph}


def _check_level(level):
    if level not in _PROPOSERS:
        raise ValueError(f"unknown level {level!r}; expected one of {LEVELS}")


def node_mask(g: Graph, cfg: AugmentationConfig, rng: np.random.Generator) -> AugmentedGraph:
    idx = _Index(g)
    return idx.materialize(_propose_node(idx, cfg, rng))


def edge_mask(g: Graph, cfg: AugmentationConfig, rng: np.random.Generator) -> AugmentedGraph:
    idx = _Index(g)
    return idx.materialize(_propose_edge(idx, cfg, rng))


def subgraph_mask(g: Graph, cfg: AugmentationConfig, rng: np.random.Generator) -> AugmentedGraph:
    idx = _Index(g)
    return idx.materialize(_propose_subgraph(idx, cfg, rng))


def augment_once(g: Graph, level: str, cfg: AugmentationConfig, rng: np.random.Generator) -> AugmentedGraph:
    _check_level(level)
    idx = _Index(g)
    return idx.materialize(_PROPOSERS[level](idx, cfg, rng))


def _screened(idx: _Index, level, cfg, purpose, indices):
    """(proposal, screened G_ano) for each trial index, in index order."""

    def one(i):
        p = _PROPOSERS[level](idx, cfg, stream(cfg.seed, level, purpose, i))
        return p, idx.screen(p)

    if cfg.workers == 1 or len(indices) == 1:
        return [one(i) for i in indices]
    with ThreadPoolExecutor(cfg.workers) as pool:
        return list(pool.map(one, indices))


# ----------------------------------------------------------------------------
# threshold and collections


def _calibrate(idx: _Index, level: str, cfg: AugmentationConfig) -> float:
    screened = _screened(idx, level, cfg, "calibrate", list(range(cfg.n_aug)))
    finite = [v for _, v in screened if math.isfinite(v)]
    if not finite:
        raise AugmentationError(f"all {cfg.n_aug} calibration augmentations at level '{level}' were degenerate")
    lo = min(finite)
    # exact values for every near-minimal candidate decide theta
    near = [p for p, v in screened if math.isfinite(v) and v <= lo * (1 + _SCREEN_RTOL) + 1e-300]
    exact = [idx.materialize(p).g_ano for p in near]
    return min(exact)


def calibrate_theta(g: Graph, level: str, cfg: AugmentationConfig) -> float:
    """Smallest G_ano among ``n_aug`` independent random augmentations."""
    _check_level(level)
    return _calibrate(_Index(g), level, cfg)


def calibrate_shared_theta(g: Graph, cfg: AugmentationConfig, levels=LEVELS) -> float:
    """Single threshold: minimum over ``n_aug`` draws cycling through ``levels``."""
    idx = _Index(g)
    values = []
    for i in range(cfg.n_aug):
        level = levels[i % len(levels)]
        values.append(idx.materialize(_PROPOSERS[level](idx, cfg, stream(cfg.seed, level, "calibrate", i))).g_ano)
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        raise AugmentationError("all shared-threshold calibration augmentations were degenerate")
    return min(finite)


def build_collection(g: Graph, level: str, cfg: AugmentationConfig, theta: float | None = None) -> AugmentedGraphSet:
    """Rejection-sample ``l`` augmentations with G_ano <= theta.

    After ``max_trials`` consecutive rejections theta is multiplied by
    ``theta_relax``; more than ``max_relaxations`` relaxations is an error.
    """
    _check_level(level)
    idx = _Index(g)
    if theta is None:
        theta = _calibrate(idx, level, cfg)
    target = cfg.target_size(level)
    accepted: list[AugmentedGraph] = []
    failures = relaxations = trial = 0
    batch = max(1, 4 * cfg.workers)
    while len(accepted) < target:
        for proposal, screen in _screened(idx, level, cfg, "collect", list(range(trial, trial + batch))):
            trial += 1
            ok = False
            if math.isfinite(screen) and screen <= theta * (1 + _SCREEN_RTOL):
                cand = idx.materialize(proposal)
                ok = math.isfinite(cand.g_ano) and cand.g_ano <= theta
            if ok:
                accepted.append(cand)
                failures = 0
                if len(accepted) == target:
                    break
                continue
            failures += 1
            if failures >= cfg.max_trials:
                if relaxations >= cfg.max_relaxations:
                    raise AugmentationError(
                        f"level '{level}': only {len(accepted)}/{target} augmentations reached "
                        f"G_ano <= {theta:.6g} after {relaxations} relaxations; "
                        "increase mask counts or theta_relax"
                    )
                theta *= cfg.theta_relax
                relaxations += 1
                failures = 0
    return AugmentedGraphSet(level, theta, accepted, trial, relaxations)


def random_collection(g: Graph, level: str, cfg: AugmentationConfig) -> AugmentedGraphSet:
    """Same sampling with no gate (threshold +inf)."""
    return build_collection(g, level, cfg, theta=math.inf)


def build_collections(
    g: Graph, cfg: AugmentationConfig, levels=LEVELS, gated: bool = True
) -> dict[str, AugmentedGraphSet]:
    if not gated:
        return {lv: random_collection(g, lv, cfg) for lv in levels}
    shared = calibrate_shared_theta(g, cfg, levels) if cfg.shared_theta else None
    return {lv: build_collection(g, lv, cfg, theta=shared) for lv in levels}
