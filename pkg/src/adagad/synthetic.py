"""Synthetic attributed graphs for tests, demos and runtime proxies.

``citation_graph`` mimics the shape of a citation network (homophilous
communities, heavy-tailed degrees, sparse binary bag-of-words attributes);
with default arguments it matches Cora's node count, attribute width and
edge density. It is a stand-in, not a reproduction of any published dataset.
"""
from __future__ import annotations

import numpy as np

from .graph import Graph
from .injection import InjectionConfig, inject


def _community_edges(rng, communities, n_edges, homophily, weights):
    n = len(communities)
    members = [np.flatnonzero(communities == c) for c in range(communities.max() + 1)]
    member_p = [weights[m] / weights[m].sum() for m in members]
    p_all = weights / weights.sum()
    edges = set()
    while len(edges) < n_edges:
        batch = n_edges - len(edges)
        u = rng.choice(n, size=batch, p=p_all)
        same = rng.random(batch) < homophily
        for a, s in zip(u, same):
            if s:
                c = communities[a]
                b = rng.choice(members[c], p=member_p[c])
            else:
                b = rng.choice(n, p=p_all)
            if a != b:
                edges.add((min(a, b), max(a, b)))
    return np.array(sorted(edges), dtype=np.int64)


def citation_graph(
    n: int = 2708,
    d: int = 1433,
    n_edges: int = 5278,
    n_classes: int = 7,
    words_per_node: int = 18,
    homophily: float = 0.8,
    topic_strength: float = 0.7,
    seed: int = 0,
) -> Graph:
    """Unlabeled homophilous graph with binary word-presence attributes."""
    rng = np.random.default_rng(seed)
    communities = rng.integers(n_classes, size=n)
    weights = rng.pareto(2.5, size=n) + 1.0
    edges = _community_edges(rng, communities, n_edges, homophily, weights)

    vocab = rng.permutation(d)
    topic_words = np.array_split(vocab, n_classes)
    x = np.zeros((n, d))
    for i in range(n):
        k_topic = rng.binomial(words_per_node, topic_strength)
        words = rng.choice(topic_words[communities[i]], size=min(k_topic, len(topic_words[communities[i]])), replace=False)
        noise = rng.choice(d, size=words_per_node - len(words), replace=False)
        x[i, words] = 1.0
        x[i, noise] = 1.0
    return Graph(n, edges, x)


def attributed_graph(
    n: int = 124,
    d: int = 28,
    n_edges: int = 335,
    n_classes: int = 4,
    homophily: float = 0.85,
    noise: float = 0.3,
    seed: int = 0,
) -> Graph:
    """Small unlabeled graph with continuous community-dependent attributes."""
    rng = np.random.default_rng(seed)
    communities = rng.integers(n_classes, size=n)
    weights = rng.pareto(3.0, size=n) + 1.0
    edges = _community_edges(rng, communities, n_edges, homophily, weights)
    centers = rng.normal(size=(n_classes, d))
    x = centers[communities] + noise * rng.normal(size=(n, d))
    return Graph(n, edges, x)


def injected_citation_graph(n_anomalies: int = 138, clique_size: int = 15, seed: int = 0, **kwargs) -> Graph:
    """Cora-scale stand-in with an even contextual/structural split of injected anomalies."""
    g = citation_graph(seed=seed, **kwargs)
    half = n_anomalies // 2
    return inject(g, InjectionConfig(half, n_anomalies - half, 50, clique_size, seed))


def injected_attributed_graph(n_anomalies: int = 6, clique_size: int = 3, seed: int = 0, **kwargs) -> Graph:
    g = attributed_graph(seed=seed, **kwargs)
    half = n_anomalies // 2
    return inject(g, InjectionConfig(half, n_anomalies - half, 50, clique_size, seed))
