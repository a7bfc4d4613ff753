"""Immutable attributed graph plus dataset-directory I/O.

Dataset directory layout::

    edges.tsv     one undirected edge per line, "u<TAB>v", 0-indexed
    features.csv  n rows of d comma-separated floats, no header
    labels.csv    optional, n lines of 0/1
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Dataset files or arrays violate the graph invariants."""


def canonical_edges(edges, n: int) -> np.ndarray:
    """Sort, orient (u < v) and deduplicate an edge list; reject self-loops."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise GraphFormatError(f"edge endpoint out of range [0, {n})")
    if np.any(e[:, 0] == e[:, 1]):
        raise GraphFormatError("self-loops are not allowed")
    e = np.sort(e, axis=1)
    if len(e):
        e = np.unique(e, axis=0)
    return e


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph.

    ``edges`` holds each undirected edge once with ``u < v``, lexicographically
    sorted. ``labels`` is carried for evaluation only; training code receives
    ``graph.unlabeled()``.
    """

    n: int
    edges: np.ndarray
    attributes: np.ndarray
    labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        edges = canonical_edges(self.edges, self.n)
        x = np.asarray(self.attributes, dtype=np.float64)
        if x.flags.writeable:
            x = x.copy()
        if x.ndim != 2 or x.shape[0] != self.n:
            raise GraphFormatError(f"attributes must be {self.n} x d, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise GraphFormatError("attributes contain non-finite values")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (self.n,):
                raise GraphFormatError(f"labels must have length {self.n}, got {labels.shape}")
            if not np.all((labels == 0) | (labels == 1)):
                raise GraphFormatError("labels must be 0/1")
            labels.setflags(write=False)
        edges.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "attributes", x)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def d(self) -> int:
        return self.attributes.shape[1]

    def unlabeled(self) -> "Graph":
        if self.labels is None:
            return self
        return Graph(self.n, self.edges, self.attributes)

    def with_attributes(self, attributes) -> "Graph":
        return Graph(self.n, self.edges, attributes, self.labels)

    def with_edges(self, edges) -> "Graph":
        return Graph(self.n, edges, self.attributes, self.labels)

    def with_labels(self, labels) -> "Graph":
        return Graph(self.n, self.edges, self.attributes, labels)

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        u, v = self.edges[:, 0], self.edges[:, 1]
        ones = np.ones(2 * self.m, dtype=np.int64)
        return sp.csr_matrix((ones, (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(self.n, self.n))

    def neighbors(self, i: int) -> np.ndarray:
        a = self._csr
        return a.indices[a.indptr[i]:a.indptr[i + 1]].copy()

    def dense_adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n).astype(np.int64)

    def digest(self) -> str:
        """sha256 over n, edges and attributes (labels excluded: training never sees them)."""
        h = hashlib.sha256(f"{self.n},{self.d}".encode())
        h.update(np.ascontiguousarray(self.edges, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.attributes, dtype=np.float64).tobytes())
        return h.hexdigest()

    def same_as(self, other: "Graph") -> bool:
        def eq(a, b):
            return (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))

        return (
            self.n == other.n
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.attributes, other.attributes)
            and eq(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class DerivedMatrices:
    degree_vector: np.ndarray
    laplacian: sp.csr_matrix
    normalized_adjacency: sp.csr_matrix


def derive_matrices(g: Graph) -> DerivedMatrices:
    """Degree vector, unnormalized Laplacian D - A, and D̃^{-1/2}(A + I)D̃^{-1/2}."""
    a = g._csr.astype(np.float64)
    deg = g.degrees()
    lap = (sp.diags(deg.astype(np.float64)) - a).tocsr()
    deg_loop = deg + 1.0
    inv = sp.diags(1.0 / np.sqrt(deg_loop))
    norm = (inv @ (a + sp.identity(g.n, format="csr")) @ inv).tocsr()
    return DerivedMatrices(deg, lap, norm)


def neighborhood(g: Graph, i: int, closed: bool = False) -> set[int]:
    if not 0 <= i < g.n:
        raise IndexError(f"node {i} out of range [0, {g.n})")
    out = set(int(j) for j in g.neighbors(i))
    if closed:
        out.add(i)
    return out


# ----------------------------------------------------------------------------
# I/O


def load_graph(dir_path) -> Graph:
    root = Path(dir_path)
    edge_file, feat_file, label_file = root / "edges.tsv", root / "features.csv", root / "labels.csv"
    for f in (edge_file, feat_file):
        if not f.is_file():
            raise FileNotFoundError(f"missing dataset file: {f}")

    rows = []
    with open(feat_file, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise GraphFormatError(f"{feat_file}:{lineno}: {exc}") from None
            if rows and len(vals) != len(rows[0]):
                raise GraphFormatError(f"{feat_file}:{lineno}: expected {len(rows[0])} values, got {len(vals)}")
            if not all(math.isfinite(v) for v in vals):
                raise GraphFormatError(f"{feat_file}:{lineno}: non-finite attribute value")
            rows.append(vals)
    if not rows:
        raise GraphFormatError(f"{feat_file} is empty")
    x = np.array(rows, dtype=np.float64)
    n = len(rows)

    pairs = []
    with open(edge_file) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise GraphFormatError(f"{edge_file}:{lineno}: expected 2 node ids")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{edge_file}:{lineno}: non-integer node id") from None
            if not (0 <= u < n and 0 <= v < n):
                raise GraphFormatError(f"{edge_file}:{lineno}: node id out of range [0, {n})")
            if u != v:
                pairs.append((u, v))

    labels = None
    if label_file.is_file():
        with open(label_file) as fh:
            vals = [line.strip() for line in fh if line.strip()]
        if len(vals) != n:
            raise GraphFormatError(f"{label_file}: expected {n} labels, got {len(vals)}")
        try:
            labels = np.array([int(v) for v in vals], dtype=np.int64)
        except ValueError:
            raise GraphFormatError(f"{label_file}: labels must be 0/1") from None

    return Graph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2), x, labels)


def _fmt(v: float) -> str:
    s = f"{v:.9g}"
    return "0" if s == "-0" else s


def write_graph(g: Graph, dir_path) -> Path:
    """Write the canonical form: sorted edges with u < v, floats at 9 significant digits."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "edges.tsv", "w") as fh:
        fh.writelines(f"{u}\t{v}\n" for u, v in g.edges)
    with open(root / "features.csv", "w") as fh:
        fh.writelines(",".join(_fmt(v) for v in row) + "\n" for row in g.attributes)
    label_file = root / "labels.csv"
    if g.labels is not None:
        with open(label_file, "w") as fh:
            fh.writelines(f"{int(v)}\n" for v in g.labels)
    elif label_file.exists():
        label_file.unlink()
    return root
