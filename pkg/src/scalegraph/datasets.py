"""Dataset builders, JSON-Lines graph files, and deterministic splits.

File format: one JSON object per line,
  {"n": 5, "nodes": [[...], ...], "edges": [[i, j, channel], ...], "class": 0}
with undirected edges listed exactly once as i < j. Generic graphs use
channel 0 for presence; molecular graphs use channels 1..3 for single,
double, and triple bonds and one-hot atom rows. A file may carry one
metadata line {"_meta": {...}} which loaders skip.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graphs import Graph

__all__ = [
    "ATOM_TYPES",
    "BOND_ORDERS",
    "DatasetSpec",
    "MAX_VALENCE",
    "build_community_small_dataset",
    "empirical_size_histogram",
    "generate_community_small",
    "load_graph_file",
    "molecule_graph",
    "read_metadata",
    "save_graph_file",
    "split_dataset",
]

ATOM_TYPES = ("C", "N", "O", "F")
MAX_VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1}
BOND_ORDERS = {1: 1, 2: 2, 3: 3}  # channel -> bond order


@dataclass(frozen=True)
class DatasetSpec:
    """What a run trains on and how it is split."""

    name: str
    split_fraction: float = 0.8
    rng_seed: int = 0
    class_count: int = 1

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValidationError(
                f"split_fraction must be in (0, 1), got {self.split_fraction}"
            )
        if self.class_count < 1:
            raise ValidationError("class_count must be >= 1")


def generate_community_small(
    n_nodes: int,
    rng: np.random.Generator,
    p_intra: float = 0.7,
    p_inter: float = 0.05,
) -> Graph:
    """Two equal planted communities with a guaranteed cross link.

    Within-block pairs are Bernoulli(p_intra), cross-block pairs
    Bernoulli(p_inter); if no cross edge came up, one uniformly chosen
    cross pair is added so the blocks cannot fall apart.
    """
    if n_nodes < 2 or n_nodes % 2 != 0:
        raise ValidationError(f"community graphs need an even n >= 2, got {n_nodes}")
    half = n_nodes // 2
    adj = np.zeros((n_nodes, n_nodes), dtype=np.float64)
    crossed = False
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            same = (i < half) == (j < half)
            p = p_intra if same else p_inter
            if rng.random() < p:
                adj[i, j] = adj[j, i] = 1.0
                crossed = crossed or not same
    if not crossed:
        i = int(rng.integers(half))
        j = half + int(rng.integers(half))
        adj[i, j] = adj[j, i] = 1.0
    return Graph(
        node_features=np.ones((n_nodes, 1), dtype=np.float64),
        edge_attrs=adj[:, :, None],
    )


def build_community_small_dataset(
    count: int = 100,
    rng_seed: int = 0,
    min_nodes: int = 12,
    max_nodes: int = 20,
    p_intra: float = 0.7,
    p_inter: float = 0.05,
):
    """Sample `count` community graphs with even sizes in [min, max]."""
    if min_nodes % 2 or max_nodes % 2 or min_nodes > max_nodes:
        raise ValidationError("size bounds must be even with min <= max")
    rng = np.random.default_rng(rng_seed)
    sizes = [int(s) for s in range(min_nodes, max_nodes + 1, 2)]
    out = []
    for _ in range(count):
        n = sizes[int(rng.integers(len(sizes)))]
        out.append(generate_community_small(n, rng, p_intra, p_inter))
    return out


def split_dataset(items, spec: DatasetSpec):
    """Deterministic shuffled split; returns (train_indices, test_indices)."""
    n = len(items)
    if n < 2:
        raise ValidationError("need at least two items to split")
    perm = np.random.default_rng(spec.rng_seed).permutation(n)
    cut = int(round(n * spec.split_fraction))
    cut = min(max(cut, 1), n - 1)  # both sides stay non-empty
    return sorted(int(i) for i in perm[:cut]), sorted(int(i) for i in perm[cut:])


def molecule_graph(atoms, bonds) -> Graph:
    """Build a molecular graph from atom symbols and (i, j, order) bonds."""
    n = len(atoms)
    if n < 1:
        raise ValidationError("molecule needs at least one atom")
    nodes = np.zeros((n, len(ATOM_TYPES)), dtype=np.float64)
    for i, sym in enumerate(atoms):
        if sym not in ATOM_TYPES:
            raise ValidationError(f"unknown atom type {sym!r}")
        nodes[i, ATOM_TYPES.index(sym)] = 1.0
    f = len(ATOM_TYPES)  # channels: none, single, double, triple
    edges = np.zeros((n, n, f), dtype=np.float64)
    edges[:, :, 0] = 1.0
    np.fill_diagonal(edges[:, :, 0], 0.0)
    for i, j, order in bonds:
        if not 0 <= i < n and 0 <= j < n or i == j:
            raise ValidationError(f"bond ({i},{j}) out of range")
        if order not in BOND_ORDERS.values():
            raise ValidationError(f"bond order must be 1, 2, or 3, got {order}")
        for a, b in ((i, j), (j, i)):
            edges[a, b, :] = 0.0
            edges[a, b, order] = 1.0
    return Graph(node_features=nodes, edge_attrs=edges)


def _graph_to_record(g: Graph, label: int) -> dict:
    edges = []
    if g.edge_dim == 1:
        mat = g.edge_attrs[:, :, 0]
        for i in range(g.n_nodes):
            for j in range(i + 1, g.n_nodes):
                if mat[i, j] > 0.5:
                    edges.append([i, j, 0])
    else:
        cls = np.argmax(g.edge_attrs, axis=2)
        for i in range(g.n_nodes):
            for j in range(i + 1, g.n_nodes):
                if cls[i, j] != 0:
                    edges.append([i, j, int(cls[i, j])])
    return {
        "n": g.n_nodes,
        "nodes": [[float(v) for v in row] for row in g.node_features],
        "edges": edges,
        "class": int(label),
    }


def save_graph_file(path, graphs, labels=None, metadata=None) -> None:
    """Write graphs as JSON lines; metadata (if any) goes first."""
    if labels is None:
        labels = [0] * len(graphs)
    if len(labels) != len(graphs):
        raise ValidationError("labels must match graphs one to one")
    with open(path, "w") as fh:
        if metadata is not None:
            fh.write(json.dumps({"_meta": metadata}, sort_keys=True) + "\n")
        for g, lab in zip(graphs, labels):
            fh.write(json.dumps(_graph_to_record(g, lab), sort_keys=True) + "\n")


def _record_to_graph(rec: dict, molecular: bool, lineno: int):
    try:
        n = int(rec["n"])
        nodes = np.asarray(rec["nodes"], dtype=np.float64)
        edge_list = rec["edges"]
        label = int(rec.get("class", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"line {lineno}: malformed record ({exc})") from exc
    if nodes.ndim != 2 or nodes.shape[0] != n:
        raise ValidationError(f"line {lineno}: nodes shape {nodes.shape} != ({n}, D)")
    if molecular:
        if nodes.shape[1] != len(ATOM_TYPES):
            raise ValidationError(
                f"line {lineno}: molecular nodes need {len(ATOM_TYPES)} channels"
            )
        f = len(ATOM_TYPES)
    else:
        f = 1
    edges = np.zeros((n, n, f), dtype=np.float64)
    if molecular:
        edges[:, :, 0] = 1.0
        np.fill_diagonal(edges[:, :, 0], 0.0)
    seen = set()
    for entry in edge_list:
        try:
            i, j, ch = (int(v) for v in entry)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"line {lineno}: bad edge entry {entry!r}") from exc
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"line {lineno}: edge ({i},{j}) out of range")
        if i >= j:
            raise ValidationError(
                f"line {lineno}: undirected edges must be listed once with i < j, got ({i},{j})"
            )
        if (i, j) in seen:
            raise ValidationError(f"line {lineno}: duplicate edge ({i},{j})")
        seen.add((i, j))
        if molecular:
            if ch not in BOND_ORDERS:
                raise ValidationError(f"line {lineno}: bad bond channel {ch}")
            for a, b in ((i, j), (j, i)):
                edges[a, b, :] = 0.0
                edges[a, b, ch] = 1.0
        else:
            if ch != 0:
                raise ValidationError(f"line {lineno}: generic graphs use channel 0, got {ch}")
            edges[i, j, 0] = edges[j, i, 0] = 1.0
    return Graph(node_features=nodes, edge_attrs=edges), label


def load_graph_file(path, molecular: bool = False):
    """Read a graph file; returns a list of (Graph, class_label)."""
    if not os.path.exists(path):
        raise ValidationError(f"no such graph file: {path}")
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: not valid JSON ({exc})") from exc
            if not isinstance(rec, dict):
                raise ValidationError(f"line {lineno}: record must be an object")
            if "_meta" in rec:
                continue
            out.append(_record_to_graph(rec, molecular, lineno))
    if not out:
        raise ValidationError(f"graph file {path} holds no graphs")
    return out


def read_metadata(path) -> dict:
    """Return the file's metadata object, or {} when none is present."""
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if isinstance(rec, dict) and "_meta" in rec:
                return rec["_meta"]
            break
    return {}


def empirical_size_histogram(graphs) -> dict:
    """Map node count -> frequency over a graph list."""
    hist: dict = {}
    for g in graphs:
        hist[g.n_nodes] = hist.get(g.n_nodes, 0) + 1
    return hist


def sample_size(hist: dict, rng: np.random.Generator) -> int:
    """Draw a node count from an empirical size histogram."""
    if not hist:
        raise ValidationError("empty size histogram")
    sizes = sorted(hist)
    weights = np.array([hist[s] for s in sizes], dtype=np.float64)
    weights /= weights.sum()
    return int(rng.choice(sizes, p=weights))
