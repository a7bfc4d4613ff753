import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adagad.graph import Graph, GraphFormatError, derive_matrices, load_graph, neighborhood, write_graph

from conftest import path_graph, random_graph


def _write(tmp_path, edges: str, features: str, labels: str | None = None):
    (tmp_path / "edges.tsv").write_text(edges)
    (tmp_path / "features.csv").write_text(features)
    if labels is not None:
        (tmp_path / "labels.csv").write_text(labels)
    return tmp_path


# ---------------------------------------------------------------- loading


def test_load_minimal(tmp_path):
    g = load_graph(_write(tmp_path, "0\t1\n", "1\n2\n"))
    assert (g.n, g.m, g.d) == (2, 1, 1)
    assert g.labels is None


def test_duplicate_reverse_edge_is_idempotent(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = load_graph(_write(tmp_path / "a", "0\t1\n", "1\n2\n"))
    b = load_graph(_write(tmp_path / "b", "0\t1\n1\t0\n", "1\n2\n"))
    assert b.m == 1
    assert a.same_as(b)


def test_load_labels(tmp_path):
    g = load_graph(_write(tmp_path, "0\t1\n1\t2\n", "1,0\n0,1\n1,1\n", "0\n1\n0\n"))
    assert g.labels.tolist() == [0, 1, 0]
    assert g.unlabeled().labels is None


@pytest.mark.parametrize(
    "edges,features,labels,match",
    [
        ("0\t1\n", "1,2\n3\n", None, "expected 2 values"),
        ("0\t5\n", "1\n2\n", None, "out of range"),
        ("0\t1\n", "1\nnan\n", None, "non-finite"),
        ("0\t1\n", "1\n2\n", "0\n", "expected 2 labels"),
        ("0\t1\n", "1\n2\n", "0\n2\n", "0/1"),
        ("0\tx\n", "1\n2\n", None, "non-integer"),
    ],
)
def test_load_errors(tmp_path, edges, features, labels, match):
    with pytest.raises(GraphFormatError, match=match):
        load_graph(_write(tmp_path, edges, features, labels))


def test_missing_file(tmp_path):
    (tmp_path / "features.csv").write_text("1\n")
    with pytest.raises(FileNotFoundError):
        load_graph(tmp_path)


def test_self_loop_lines_are_dropped_on_load(tmp_path):
    g = load_graph(_write(tmp_path, "0\t0\n0\t1\n", "1\n2\n"))
    assert g.m == 1


def test_constructor_rejects_bad_input():
    with pytest.raises(GraphFormatError):
        Graph(2, [(0, 0)], np.ones((2, 1)))
    with pytest.raises(GraphFormatError):
        Graph(2, [(0, 1)], np.ones((3, 1)))
    with pytest.raises(GraphFormatError):
        Graph(2, [(0, 1)], [[1.0], [np.inf]])


def test_graph_is_immutable():
    g = path_graph(3)
    with pytest.raises(ValueError):
        g.attributes[0, 0] = 5.0
    with pytest.raises(ValueError):
        g.edges[0, 0] = 2


def test_round_trip_is_byte_identical(tmp_path):
    g = random_graph(30, 0.2, 4, seed=1).with_labels(np.arange(30) % 2)
    write_graph(g, tmp_path / "a")
    g2 = load_graph(tmp_path / "a")
    write_graph(g2, tmp_path / "b")
    for f in ("edges.tsv", "features.csv", "labels.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert np.allclose(g2.attributes, g.attributes, rtol=1e-8)
    assert np.array_equal(g2.edges, g.edges)


def test_digest_ignores_labels():
    g = path_graph(4)
    assert g.digest() == g.with_labels([0, 1, 0, 0]).digest()
    assert g.digest() != g.with_attributes(np.zeros((4, 1))).digest()


# ---------------------------------------------------------------- matrices


def test_k2_matrices():
    m = derive_matrices(Graph(2, [(0, 1)], np.ones((2, 1))))
    assert m.degree_vector.tolist() == [1, 1]
    assert m.laplacian.toarray().tolist() == [[1, -1], [-1, 1]]


def test_isolated_node_matrices():
    m = derive_matrices(Graph(3, [(0, 1)], np.ones((3, 1))))
    assert m.degree_vector[2] == 0
    assert not m.laplacian.toarray()[2].any()
    # self-loop normalization keeps the isolated row finite: entry 1
    assert m.normalized_adjacency[2, 2] == 1.0


def test_p3_matrices():
    m = derive_matrices(path_graph(3))
    assert m.degree_vector.tolist() == [1, 2, 1]
    lap = m.laplacian.toarray()
    expected = np.diag([1, 2, 1]) - np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    assert np.array_equal(lap, expected)
    assert np.all(lap.sum(axis=1) == 0)


def test_derive_is_pure():
    g = random_graph(20, 0.3, 2, seed=3)
    a, b = derive_matrices(g), derive_matrices(g)
    assert (a.laplacian != b.laplacian).nnz == 0
    assert (a.normalized_adjacency != b.normalized_adjacency).nnz == 0


def test_neighborhoods():
    k2 = Graph(3, [(0, 1)], np.ones((3, 1)))
    assert neighborhood(k2, 0) == {1}
    assert neighborhood(k2, 0, closed=True) == {0, 1}
    assert neighborhood(k2, 2, closed=True) == {2}
    with pytest.raises(IndexError):
        neighborhood(k2, 3)


graphs = st.builds(
    random_graph,
    n=st.integers(2, 25),
    p=st.floats(0.0, 1.0),
    d=st.integers(1, 3),
    seed=st.integers(0, 10_000),
)


@given(graphs, st.integers(0, 10_000))
def test_laplacian_psd_and_row_sums(g, seed):
    lap = derive_matrices(g).laplacian
    assert np.all(np.asarray(lap.sum(axis=1)).ravel() == 0)
    y = np.random.default_rng(seed).normal(size=g.n)
    assert y @ (lap @ y) >= -1e-9


@given(graphs)
def test_normalized_adjacency_spectral_radius(g):
    a = derive_matrices(g).normalized_adjacency
    assert a.min() >= 0
    # power iteration on a nonnegative symmetric matrix
    v = np.ones(g.n) / np.sqrt(g.n)
    radius = 0.0
    for _ in range(500):
        w = a @ v
        radius = np.linalg.norm(w)
        v = w / radius
    assert radius <= 1 + 1e-6


@given(graphs)
def test_edges_canonical(g):
    e = g.edges
    assert np.all(e[:, 0] < e[:, 1])
    assert len({tuple(r) for r in e.tolist()}) == g.m
    a = g.dense_adjacency()
    assert np.array_equal(a, a.T)
    assert np.array_equal(a.sum(axis=1), g.degrees())
