"""Graph container invariants, hashing, and isomorphism checks."""
import itertools

import numpy as np
import pytest

from scalegraph.errors import ValidationError
from scalegraph.graphs import (
    Graph,
    batch_and_pad,
    canonical_partition,
    edge_class_count,
    edge_class_matrix,
    graphs_isomorphic,
    permute_graph,
    wl_canonical_hash,
)


def make_graph(n, edges, feature=None):
    nodes = np.ones((n, 1)) if feature is None else np.asarray(feature, dtype=np.float64)
    adj = np.zeros((n, n, 1))
    for i, j in edges:
        adj[i, j, 0] = adj[j, i, 0] = 1.0
    return Graph(node_features=nodes, edge_attrs=adj)


def random_graph(n, rng, p=0.4):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return make_graph(n, edges)


class TestValidation:
    def test_asymmetric_undirected_rejected(self):
        adj = np.zeros((3, 3, 1))
        adj[0, 1, 0] = 1.0  # (0,1) set but (1,0) missing
        with pytest.raises(ValidationError):
            Graph(node_features=np.ones((3, 1)), edge_attrs=adj)

    def test_nonzero_diagonal_rejected(self):
        adj = np.zeros((2, 2, 1))
        adj[0, 0, 0] = 1.0
        with pytest.raises(ValidationError):
            Graph(node_features=np.ones((2, 1)), edge_attrs=adj)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            Graph(node_features=np.ones((3, 1)), edge_attrs=np.zeros((2, 2, 1)))
        with pytest.raises(ValidationError):
            Graph(node_features=np.ones((3,)), edge_attrs=np.zeros((3, 3, 1)))

    def test_non_finite_rejected(self):
        nodes = np.ones((2, 1))
        nodes[0, 0] = np.nan
        with pytest.raises(ValidationError):
            Graph(node_features=nodes, edge_attrs=np.zeros((2, 2, 1)))

    def test_empty_graph_rejected(self):
        with pytest.raises(ValidationError):
            Graph(node_features=np.ones((0, 1)), edge_attrs=np.zeros((0, 0, 1)))

    def test_arrays_become_read_only(self):
        g = make_graph(3, [(0, 1)])
        with pytest.raises(ValueError):
            g.edge_attrs[0, 1, 0] = 0.0


class TestBasics:
    def test_counts(self):
        g = make_graph(4, [(0, 1), (1, 2), (2, 3)])
        assert g.n_nodes == 4
        assert g.n_edges == 3
        assert g.degrees().tolist() == [1, 2, 2, 1]

    def test_edge_class_count(self):
        assert edge_class_count(1) == 2
        assert edge_class_count(4) == 4

    def test_edge_class_matrix_binary(self):
        g = make_graph(3, [(0, 2)])
        m = edge_class_matrix(g)
        assert m[0, 2] == 1 and m[2, 0] == 1 and m[0, 1] == 0
        assert np.all(np.diag(m) == 0)

    def test_permute_round_trip(self):
        rng = np.random.default_rng(0)
        g = random_graph(7, rng)
        perm = rng.permutation(7)
        inv = np.argsort(perm)
        back = permute_graph(permute_graph(g, perm), inv)
        assert np.array_equal(back.node_features, g.node_features)
        assert np.array_equal(back.edge_attrs, g.edge_attrs)

    def test_permute_rejects_non_permutation(self):
        g = make_graph(3, [])
        with pytest.raises(ValidationError):
            permute_graph(g, [0, 0, 1])


class TestBatch:
    def test_pad_unpad_exact(self):
        rng = np.random.default_rng(1)
        graphs = [random_graph(n, rng) for n in (3, 6, 4)]
        batch = batch_and_pad(graphs, labels=[0, 1, 0])
        assert batch.node_features.shape == (3, 6, 1)
        assert batch.node_mask.sum() == 3 + 6 + 4
        back = batch.unpad()
        for a, b in zip(graphs, back):
            assert np.array_equal(a.node_features, b.node_features)
            assert np.array_equal(a.edge_attrs, b.edge_attrs)

    def test_padding_is_zero(self):
        graphs = [make_graph(2, [(0, 1)]), make_graph(4, [])]
        batch = batch_and_pad(graphs)
        assert np.all(batch.node_features[0, 2:] == 0)
        assert np.all(batch.edge_attrs[0, 2:, :, :] == 0)

    def test_mixed_dims_rejected(self):
        a = make_graph(2, [])
        b = Graph(node_features=np.ones((2, 3)), edge_attrs=np.zeros((2, 2, 1)))
        with pytest.raises(ValidationError):
            batch_and_pad([a, b])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            batch_and_pad([])


class TestWLHash:
    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            g = random_graph(int(rng.integers(2, 10)), rng)
            perm = rng.permutation(g.n_nodes)
            assert wl_canonical_hash(g) == wl_canonical_hash(permute_graph(g, perm))

    def test_distinguishes_triangle_from_path(self):
        tri = make_graph(3, [(0, 1), (1, 2), (0, 2)])
        path = make_graph(3, [(0, 1), (1, 2)])
        assert wl_canonical_hash(tri) != wl_canonical_hash(path)

    def test_feature_sensitivity(self):
        a = make_graph(2, [(0, 1)])
        b = make_graph(2, [(0, 1)], feature=[[1.0], [2.0]])
        assert wl_canonical_hash(a) != wl_canonical_hash(b)

    def test_stable_across_calls(self):
        g = make_graph(4, [(0, 1), (2, 3)])
        assert wl_canonical_hash(g) == wl_canonical_hash(g)


def brute_force_isomorphic(a: Graph, b: Graph) -> bool:
    """Oracle: try every node permutation."""
    if a.n_nodes != b.n_nodes:
        return False
    ea, eb = a.edge_attrs, b.edge_attrs
    fa, fb = a.node_features, b.node_features
    for perm in itertools.permutations(range(a.n_nodes)):
        p = list(perm)
        if np.array_equal(fa[p], fb) and np.array_equal(ea[np.ix_(p, p)], eb):
            return True
    return False


class TestIsomorphism:
    def test_matches_brute_force_on_4_node_graphs(self):
        pairs = list(itertools.combinations(range(4), 2))
        graphs = []
        for bits in range(1 << len(pairs)):
            edges = [pairs[k] for k in range(len(pairs)) if bits >> k & 1]
            graphs.append(make_graph(4, edges))
        rng = np.random.default_rng(3)
        idx = rng.integers(0, len(graphs), size=(120, 2))
        for i, j in idx:
            a, b = graphs[int(i)], graphs[int(j)]
            assert graphs_isomorphic(a, b) == brute_force_isomorphic(a, b)

    def test_permuted_copy_is_isomorphic(self):
        rng = np.random.default_rng(4)
        g = random_graph(6, rng)
        assert graphs_isomorphic(g, permute_graph(g, rng.permutation(6)))

    def test_canonical_partition_groups_copies(self):
        rng = np.random.default_rng(5)
        g1 = random_graph(5, rng)
        g2 = random_graph(6, rng, p=0.8)
        group = [g1, permute_graph(g1, rng.permutation(5)), g2, g1]
        classes = canonical_partition(group)
        assert classes[0] == classes[1] == classes[3]
        assert classes[2] != classes[0]
