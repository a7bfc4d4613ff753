"""Synthetic contextual / structural anomaly injection.

Contextual: a target's attribute row is replaced by the row of the farthest
(Euclidean) node among ``candidate_pool_k`` uniformly drawn others.
Structural: targets are split into groups of ``clique_size`` and each group is
fully connected.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Graph


class InjectionError(ValueError):
    pass


@dataclass(frozen=True)
class InjectionConfig:
    num_contextual: int = 0
    num_structural: int = 0
    candidate_pool_k: int = 50
    clique_size: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.num_contextual < 0 or self.num_structural < 0:
            raise InjectionError("anomaly counts must be non-negative")
        if self.clique_size < 2:
            raise InjectionError("clique_size must be >= 2")
        if self.candidate_pool_k < 1:
            raise InjectionError("candidate_pool_k must be >= 1")
        if self.num_structural == 1:
            raise InjectionError("a single structural anomaly cannot form a clique")


@dataclass(frozen=True, eq=False)
class InjectionPlan:
    """Ordered record of every corruption; prefixes of it are valid partial injections."""

    cliques: list[np.ndarray] = field(default_factory=list)
    contextual: list[tuple[int, int]] = field(default_factory=list)  # (target, donor)

    @property
    def structural_nodes(self) -> np.ndarray:
        if not self.cliques:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(self.cliques)


def clique_sizes(num_structural: int, clique_size: int) -> list[int]:
    """Group sizes; a trailing remainder forms a smaller clique, and a remainder of 1 joins the previous one."""
    if num_structural == 0:
        return []
    full, rest = divmod(num_structural, clique_size)
    sizes = [clique_size] * full
    if rest >= 2 or not sizes:
        sizes.append(rest)
    elif rest == 1:
        sizes[-1] += 1
    return sizes


def plan_injection(g: Graph, cfg: InjectionConfig) -> InjectionPlan:
    total = cfg.num_contextual + cfg.num_structural
    if total > g.n:
        raise InjectionError(f"cannot inject {total} anomalies into {g.n} nodes")
    if cfg.num_structural and g.n < cfg.num_structural + cfg.num_contextual:
        raise InjectionError("insufficient nodes for the requested injection")
    rng = np.random.default_rng(cfg.seed)
    targets = rng.permutation(g.n)[:total]
    struct_targets = targets[: cfg.num_structural]
    ctx_targets = targets[cfg.num_structural:]
    if set(struct_targets.tolist()) & set(ctx_targets.tolist()):
        raise InjectionError("contextual and structural target sets overlap")

    cliques = []
    start = 0
    for size in clique_sizes(cfg.num_structural, cfg.clique_size):
        cliques.append(np.sort(struct_targets[start:start + size]))
        start += size

    x = g.attributes
    contextual = []
    for i in ctx_targets:
        others = np.delete(np.arange(g.n), i)
        k = min(cfg.candidate_pool_k, len(others))
        pool = rng.choice(others, size=k, replace=False)
        dist = np.linalg.norm(x[pool] - x[i], axis=1)
        contextual.append((int(i), int(pool[int(np.argmax(dist))])))
    return InjectionPlan(cliques, contextual)


def apply_plan(
    g: Graph,
    plan: InjectionPlan,
    n_structural: int | None = None,
    n_contextual: int | None = None,
) -> Graph:
    """Apply the first ``n_structural`` / ``n_contextual`` planned corruptions.

    Structural prefixes keep the clique edges among retained targets only;
    donors always come from the clean attribute matrix.
    """
    struct_nodes = plan.structural_nodes
    n_structural = len(struct_nodes) if n_structural is None else n_structural
    n_contextual = len(plan.contextual) if n_contextual is None else n_contextual
    kept = set(struct_nodes[:n_structural].tolist())

    new_edges = []
    structural = []
    for clique in plan.cliques:
        members = [int(v) for v in clique if int(v) in kept]
        if len(members) >= 2:
            structural.extend(members)
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                new_edges.append((members[a], members[b]))

    x = np.array(g.attributes)
    labels = np.zeros(g.n, dtype=np.int64)
    for target, donor in plan.contextual[:n_contextual]:
        x[target] = g.attributes[donor]
        labels[target] = 1
    labels[structural] = 1
    edges = g.edges
    if new_edges:
        edges = np.concatenate([edges, np.array(new_edges, dtype=np.int64)])
    return Graph(g.n, edges, x, labels)


def inject(g: Graph, cfg: InjectionConfig) -> Graph:
    """Return a labeled copy of ``g`` with the configured anomalies injected."""
    if g.labels is not None and np.any(g.labels):
        raise InjectionError("graph already carries anomaly labels")
    return apply_plan(g, plan_injection(g, cfg))


@dataclass(frozen=True, eq=False)
class ContaminationRegimes:
    clean: Graph
    half: Graph
    full: Graph
    evaluation: Graph
    plan: InjectionPlan


def contamination_regimes(
    g_clean: Graph, n_anom: int, seed: int = 0, candidate_pool_k: int = 50, clique_size: int = 15
) -> ContaminationRegimes:
    """Clean / half / fully-injected training graphs sharing one evaluation graph.

    The full graph carries ``n_anom`` anomalies split evenly between the two
    types; the half graph keeps the first half of those same corruptions.
    """
    if n_anom % 2:
        raise InjectionError("n_anom must be even")
    n_ctx = n_anom // 2
    n_struct = n_anom - n_ctx
    cfg = InjectionConfig(n_ctx, n_struct, candidate_pool_k, clique_size, seed)
    plan = plan_injection(g_clean, cfg)
    full = apply_plan(g_clean, plan)
    half_total = n_anom // 2
    half_ctx = half_total // 2
    half = apply_plan(g_clean, plan, n_structural=half_total - half_ctx, n_contextual=half_ctx)
    clean = g_clean.with_labels(np.zeros(g_clean.n, dtype=np.int64))
    return ContaminationRegimes(clean, half, full, full, plan)
