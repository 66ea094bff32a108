"""Dataset builders, file IO, and split determinism."""
import json
import math

import numpy as np
import pytest

from scalegraph.datasets import (
    DatasetSpec,
    build_community_small_dataset,
    empirical_size_histogram,
    generate_community_small,
    load_graph_file,
    molecule_graph,
    read_metadata,
    sample_size,
    save_graph_file,
    split_dataset,
)
from scalegraph.errors import ValidationError


class TestCommunityGenerator:
    def test_rejects_odd_or_tiny(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValidationError):
            generate_community_small(11, rng)
        with pytest.raises(ValidationError):
            generate_community_small(0, rng)

    def test_always_has_cross_edge(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            g = generate_community_small(8, rng, p_intra=0.7, p_inter=0.0)
            a = g.adjacency()
            assert a[:4, 4:].sum() >= 1

    def test_mean_edge_count_matches_closed_form(self):
        # expected edges: 2*C(h,2)*p_in + h^2*p_out + P(no cross)*1
        n, p_in, p_out, draws = 12, 0.7, 0.05, 4000
        h = n // 2
        intra_pairs = 2 * math.comb(h, 2)
        inter_pairs = h * h
        expect = (
            intra_pairs * p_in
            + inter_pairs * p_out
            + (1 - p_out) ** inter_pairs
        )
        var = (
            intra_pairs * p_in * (1 - p_in)
            + inter_pairs * p_out * (1 - p_out)
            + (1 - p_out) ** inter_pairs * (1 - (1 - p_out) ** inter_pairs)
        )
        rng = np.random.default_rng(2)
        counts = [generate_community_small(n, rng, p_in, p_out).n_edges for _ in range(draws)]
        sigma_mean = math.sqrt(var / draws)
        assert abs(np.mean(counts) - expect) < 3 * sigma_mean

    def test_dataset_sizes_and_determinism(self):
        a = build_community_small_dataset(count=25, rng_seed=7)
        b = build_community_small_dataset(count=25, rng_seed=7)
        assert all(12 <= g.n_nodes <= 20 and g.n_nodes % 2 == 0 for g in a)
        for ga, gb in zip(a, b):
            assert np.array_equal(ga.edge_attrs, gb.edge_attrs)

    def test_node_features_are_presence(self):
        g = generate_community_small(6, np.random.default_rng(3))
        assert g.node_features.shape == (6, 1)
        assert np.all(g.node_features == 1.0)


class TestSplit:
    def test_deterministic_disjoint_cover(self):
        items = list(range(100))
        spec = DatasetSpec(name="x", split_fraction=0.8, rng_seed=5)
        tr1, te1 = split_dataset(items, spec)
        tr2, te2 = split_dataset(items, spec)
        assert tr1 == tr2 and te1 == te2
        assert len(tr1) == 80 and len(te1) == 20
        assert set(tr1) | set(te1) == set(items)
        assert set(tr1) & set(te1) == set()

    def test_different_seed_different_split(self):
        items = list(range(50))
        a, _ = split_dataset(items, DatasetSpec(name="x", rng_seed=0))
        b, _ = split_dataset(items, DatasetSpec(name="x", rng_seed=1))
        assert a != b

    def test_bad_fraction_rejected(self):
        with pytest.raises(ValidationError):
            DatasetSpec(name="x", split_fraction=1.0)

    def test_both_sides_non_empty(self):
        tr, te = split_dataset([1, 2], DatasetSpec(name="x", split_fraction=0.99))
        assert len(tr) == 1 and len(te) == 1


class TestGraphFiles:
    def test_round_trip_generic(self, tmp_path):
        graphs = build_community_small_dataset(count=5, rng_seed=0)
        path = tmp_path / "g.jsonl"
        save_graph_file(path, graphs, labels=[0, 1, 0, 1, 0])
        pairs = load_graph_file(path)
        assert [lab for _, lab in pairs] == [0, 1, 0, 1, 0]
        for g, (h, _) in zip(graphs, pairs):
            assert np.array_equal(g.node_features, h.node_features)
            assert np.array_equal(g.edge_attrs, h.edge_attrs)

    def test_round_trip_molecular(self, tmp_path):
        m = molecule_graph(["C", "O", "C"], [(0, 1, 1), (1, 2, 2)])
        path = tmp_path / "m.jsonl"
        save_graph_file(path, [m])
        (back, _), = load_graph_file(path, molecular=True)
        assert np.array_equal(m.node_features, back.node_features)
        assert np.array_equal(m.edge_attrs, back.edge_attrs)

    def test_byte_deterministic(self, tmp_path):
        graphs = build_community_small_dataset(count=4, rng_seed=9)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_graph_file(p1, graphs, metadata={"seed": 9})
        save_graph_file(p2, graphs, metadata={"seed": 9})
        assert p1.read_bytes() == p2.read_bytes()

    def test_single_line_path_record(self, tmp_path):
        path = tmp_path / "p.jsonl"
        rec = {"n": 3, "nodes": [[1.0], [1.0], [1.0]], "edges": [[0, 1, 0], [1, 2, 0]], "class": 0}
        path.write_text(json.dumps(rec) + "\n")
        (g, lab), = load_graph_file(path)
        assert g.n_nodes == 3 and g.n_edges == 2 and lab == 0

    def test_malformed_record_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = {"n": 2, "nodes": [[1.0], [1.0]], "edges": [], "class": 0}
        path.write_text(json.dumps(good) + "\nnot json\n")
        with pytest.raises(ValidationError, match="line 2"):
            load_graph_file(path)

    def test_wrong_direction_edge_rejected(self, tmp_path):
        path = tmp_path / "dir.jsonl"
        rec = {"n": 3, "nodes": [[1.0]] * 3, "edges": [[2, 1, 0]], "class": 0}
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ValidationError, match="i < j"):
            load_graph_file(path)

    def test_duplicate_edge_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        rec = {"n": 3, "nodes": [[1.0]] * 3, "edges": [[0, 1, 0], [0, 1, 0]], "class": 0}
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ValidationError, match="duplicate"):
            load_graph_file(path)

    def test_out_of_range_edge_rejected(self, tmp_path):
        path = tmp_path / "oor.jsonl"
        rec = {"n": 2, "nodes": [[1.0]] * 2, "edges": [[0, 5, 0]], "class": 0}
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ValidationError, match="out of range"):
            load_graph_file(path)

    def test_metadata_line_skipped_and_readable(self, tmp_path):
        path = tmp_path / "meta.jsonl"
        graphs = build_community_small_dataset(count=2, rng_seed=1)
        save_graph_file(path, graphs, metadata={"purpose": "test", "count": 2})
        assert len(load_graph_file(path)) == 2
        assert read_metadata(path) == {"purpose": "test", "count": 2}

    def test_missing_file(self):
        with pytest.raises(ValidationError):
            load_graph_file("/no/such/file.jsonl")

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValidationError):
            load_graph_file(path)


class TestMolecules:
    def test_molecule_graph_layout(self):
        m = molecule_graph(["C", "F"], [(0, 1, 1)])
        assert m.node_features.tolist() == [[1, 0, 0, 0], [0, 0, 0, 1]]
        assert m.edge_attrs[0, 1].tolist() == [0, 1, 0, 0]
        assert m.edge_attrs[1, 0].tolist() == [0, 1, 0, 0]
        assert np.all(m.edge_attrs[0, 0] == 0)

    def test_unknown_atom_rejected(self):
        with pytest.raises(ValidationError):
            molecule_graph(["X"], [])

    def test_bad_bond_order_rejected(self):
        with pytest.raises(ValidationError):
            molecule_graph(["C", "C"], [(0, 1, 4)])


class TestSizeHistogram:
    def test_histogram_and_sampling(self):
        graphs = build_community_small_dataset(count=40, rng_seed=3)
        hist = empirical_size_histogram(graphs)
        assert sum(hist.values()) == 40
        rng = np.random.default_rng(0)
        draws = [sample_size(hist, rng) for _ in range(200)]
        assert set(draws) <= set(hist)

    def test_empty_histogram_rejected(self):
        with pytest.raises(ValidationError):
            sample_size({}, np.random.default_rng(0))
