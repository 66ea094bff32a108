"""Dense graph containers and structural utilities.

Graphs are stored dense: node features (N, D) and edge attributes (N, N, F).
Generic graphs use a single binary presence channel (F=1); molecular graphs
use one-hot bond channels with channel 0 meaning "no bond". The diagonal is
always zero and undirected graphs keep the edge tensor symmetric.
"""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import ValidationError

__all__ = [
    "Graph",
    "GraphBatch",
    "batch_and_pad",
    "canonical_partition",
    "edge_class_count",
    "edge_class_matrix",
    "graphs_isomorphic",
    "permute_graph",
    "to_networkx",
    "wl_canonical_hash",
]


@dataclass(frozen=True)
class Graph:
    """Immutable dense graph with validated invariants."""

    node_features: np.ndarray  # (N, D) float64
    edge_attrs: np.ndarray  # (N, N, F) float64
    undirected: bool = True

    def __post_init__(self):
        nf = np.asarray(self.node_features, dtype=np.float64)
        ea = np.asarray(self.edge_attrs, dtype=np.float64)
        if nf.ndim != 2:
            raise ValidationError(f"node_features must be (N, D), got shape {nf.shape}")
        if ea.ndim != 3:
            raise ValidationError(f"edge_attrs must be (N, N, F), got shape {ea.shape}")
        n = nf.shape[0]
        if n < 1:
            raise ValidationError("graph must have at least one node")
        if ea.shape[0] != n or ea.shape[1] != n:
            raise ValidationError(
                f"edge_attrs shape {ea.shape} does not match {n} nodes"
            )
        if ea.shape[2] < 1:
            raise ValidationError("edge_attrs needs at least one channel")
        if not np.all(np.isfinite(nf)) or not np.all(np.isfinite(ea)):
            raise ValidationError("graph tensors must be finite")
        diag = ea[np.arange(n), np.arange(n), :]
        if np.any(diag != 0.0):
            raise ValidationError("edge_attrs diagonal must be zero (no self loops)")
        if self.undirected and not np.array_equal(ea, ea.transpose(1, 0, 2)):
            raise ValidationError("undirected graph has an asymmetric edge tensor")
        nf.setflags(write=False)
        ea.setflags(write=False)
        object.__setattr__(self, "node_features", nf)
        object.__setattr__(self, "edge_attrs", ea)

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def node_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def edge_dim(self) -> int:
        return self.edge_attrs.shape[2]

    def adjacency(self) -> np.ndarray:
        """Binary (N, N) presence matrix, any nonzero channel counts."""
        if self.edge_dim == 1:
            return (self.edge_attrs[:, :, 0] > 0.5).astype(np.float64)
        # one-hot bond channels: channel 0 is "none"
        present = self.edge_attrs[:, :, 1:].sum(axis=2) > 0.5
        return present.astype(np.float64)

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1).astype(np.int64)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency().sum()) // 2


def edge_class_count(edge_dim: int) -> int:
    """Number of per-pair categories: {absent, present} for a single
    presence channel, otherwise one category per channel (channel 0 = none)."""
    return 2 if edge_dim == 1 else edge_dim


def edge_class_matrix(g: Graph) -> np.ndarray:
    """(N, N) int matrix of per-pair categories. 0 always means no edge."""
    if g.edge_dim == 1:
        return (g.edge_attrs[:, :, 0] > 0.5).astype(np.int64)
    return np.argmax(g.edge_attrs, axis=2).astype(np.int64)


def permute_graph(g: Graph, perm) -> Graph:
    """Relabel nodes: node i of the result is node perm[i] of the input."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(g.n_nodes)):
        raise ValidationError("perm must be a permutation of range(N)")
    return Graph(
        node_features=g.node_features[perm].copy(),
        edge_attrs=g.edge_attrs[np.ix_(perm, perm)].copy(),
        undirected=g.undirected,
    )


@dataclass
class GraphBatch:
    """Zero-padded batch with an explicit node mask.

    Padding rows are all-zero; unpad() recovers the original graphs exactly.
    """

    node_features: np.ndarray  # (B, Nmax, D)
    edge_attrs: np.ndarray  # (B, Nmax, Nmax, F)
    node_mask: np.ndarray  # (B, Nmax) bool
    sizes: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.node_features.shape[0]

    def unpad(self) -> list:
        out = []
        for b in range(len(self)):
            n = self.sizes[b]
            out.append(
                Graph(
                    node_features=self.node_features[b, :n].copy(),
                    edge_attrs=self.edge_attrs[b, :n, :n].copy(),
                )
            )
        return out


def batch_and_pad(graphs, labels=None) -> GraphBatch:
    """Stack graphs of mixed sizes into one zero-padded batch."""
    if not graphs:
        raise ValidationError("cannot batch zero graphs")
    d = graphs[0].node_dim
    f = graphs[0].edge_dim
    for g in graphs:
        if g.node_dim != d or g.edge_dim != f:
            raise ValidationError(
                f"mixed feature dims in batch: ({g.node_dim},{g.edge_dim}) vs ({d},{f})"
            )
    nmax = max(g.n_nodes for g in graphs)
    b = len(graphs)
    nodes = np.zeros((b, nmax, d), dtype=np.float64)
    edges = np.zeros((b, nmax, nmax, f), dtype=np.float64)
    mask = np.zeros((b, nmax), dtype=bool)
    sizes = []
    for i, g in enumerate(graphs):
        n = g.n_nodes
        nodes[i, :n] = g.node_features
        edges[i, :n, :n] = g.edge_attrs
        mask[i, :n] = True
        sizes.append(n)
    if labels is None:
        labels = [0] * b
    return GraphBatch(nodes, edges, mask, sizes, list(labels))


def _stable_digest(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
        h.update(b"|")
    return h.hexdigest()


def wl_canonical_hash(g: Graph, iterations: int = 3) -> str:
    """Permutation-invariant hash from color refinement.

    Initial colors come from the node feature rows; each round folds in the
    sorted multiset of (edge category, neighbor color) pairs. Equal hashes do
    not certify isomorphism, so callers pair this with an exact check on
    small graphs.
    """
    n = g.n_nodes
    cls = edge_class_matrix(g)
    feats = np.round(g.node_features, 6)
    colors = [_stable_digest(feats[i].tobytes()) for i in range(n)]
    for _ in range(iterations):
        nxt = []
        for i in range(n):
            nbr = sorted(
                (int(cls[i, j]), colors[j]) for j in range(n) if cls[i, j] != 0
            )
            payload = repr(nbr).encode()
            nxt.append(_stable_digest(colors[i].encode(), payload))
        colors = nxt
    return _stable_digest(str(n).encode(), repr(sorted(colors)).encode())


def to_networkx(g: Graph) -> nx.Graph:
    out = nx.Graph()
    cls = edge_class_matrix(g)
    for i in range(g.n_nodes):
        out.add_node(i, color=g.node_features[i].tobytes())
    for i in range(g.n_nodes):
        for j in range(i + 1, g.n_nodes):
            if cls[i, j] != 0:
                out.add_edge(i, j, category=int(cls[i, j]))
    return out


def graphs_isomorphic(a: Graph, b: Graph) -> bool:
    """Exact isomorphism with categorical node features and edge categories."""
    if a.n_nodes != b.n_nodes or a.n_edges != b.n_edges:
        return False
    ga, gb = to_networkx(a), to_networkx(b)
    nm = nx.algorithms.isomorphism.categorical_node_match("color", None)
    em = nx.algorithms.isomorphism.categorical_edge_match("category", 0)
    return nx.is_isomorphic(ga, gb, node_match=nm, edge_match=em)


def canonical_partition(graphs, wl_iterations: int = 3, exact_limit: int = 12):
    """Group graphs into isomorphism classes.

    Buckets by the refinement hash first; inside a bucket where every graph
    has at most exact_limit nodes, classes are refined with the exact check.
    Larger graphs in the same bucket share a class (hash collisions across
    non-isomorphic big graphs are accepted, as documented).

    Returns a class id per input graph.
    """
    buckets: dict = {}
    for idx, g in enumerate(graphs):
        buckets.setdefault(wl_canonical_hash(g, wl_iterations), []).append(idx)
    class_of = [-1] * len(list(graphs))
    next_id = 0
    for _, idxs in sorted(buckets.items()):
        small = all(graphs[i].n_nodes <= exact_limit for i in idxs)
        if not small:
            for i in idxs:
                class_of[i] = next_id
            next_id += 1
            continue
        reps: list = []  # (class id, representative graph)
        for i in idxs:
            for cid, rep in reps:
                if graphs_isomorphic(graphs[i], rep):
                    class_of[i] = cid
                    break
            else:
                reps.append((next_id, graphs[i]))
                class_of[i] = next_id
                next_id += 1
    return class_of


def all_small_graph_signatures(n: int):
    """Iterate every labeled simple graph on n nodes as edge bitmasks.

    Helper for exhaustive small-graph tests; 2^(n(n-1)/2) graphs, so keep
    n tiny.
    """
    pairs = list(itertools.combinations(range(n), 2))
    for bits in range(1 << len(pairs)):
        yield [pairs[k] for k in range(len(pairs)) if bits >> k & 1]
