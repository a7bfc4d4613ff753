"""Shared fixtures and graph builders for the test suite."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from adagad import synthetic
from adagad.graph import Graph

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# directory holding real datasets (disney/, books/, cora/ ...), if any
DATA_DIR = Path(os.environ.get("ADAGAD_DATA", Path(__file__).resolve().parent.parent / "data"))


def path_graph(n: int, x=None) -> Graph:
    edges = [(i, i + 1) for i in range(n - 1)]
    x = np.arange(n, dtype=float).reshape(-1, 1) if x is None else np.asarray(x, float).reshape(n, -1)
    return Graph(n, edges, x)


def star_graph(leaves: int) -> Graph:
    return Graph(leaves + 1, [(0, i) for i in range(1, leaves + 1)], np.ones((leaves + 1, 1)))


def cycle_graph(n: int, d: int = 1, seed: int = 0) -> Graph:
    rng = np.random.default_rng(seed)
    return Graph(n, [(i, (i + 1) % n) for i in range(n)], rng.normal(size=(n, d)))


def random_graph(n: int, p: float, d: int, seed: int) -> Graph:
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    return Graph(n, np.stack([iu[0][keep], iu[1][keep]], axis=1), rng.normal(size=(n, d)))


def dataset_dir(name: str) -> Path | None:
    p = DATA_DIR / name
    return p if (p / "edges.tsv").is_file() and (p / "features.csv").is_file() else None


@pytest.fixture(scope="session")
def small_graph() -> Graph:
    """Labeled 124-node attributed graph with six injected anomalies."""
    return synthetic.injected_attributed_graph()


@pytest.fixture
def k2() -> Graph:
    return Graph(2, [(0, 1)], [[1.0], [-1.0]])


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
