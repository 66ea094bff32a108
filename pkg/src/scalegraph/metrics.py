"""Distribution metrics, molecular checks, and attention-cost counting.

The graph-set metrics follow the usual protocol for comparing generated
against reference graphs: maximum mean discrepancy between degree
histograms, clustering-coefficient histograms, and 4-node orbit count
profiles. Molecular sets additionally get validity / uniqueness /
novelty percentages. The cost counters tally exact attended pairs for
node-by-node versus scale-by-scale autoregression.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError
from .graphs import (
    Graph,
    canonical_partition,
    graphs_isomorphic,
    wl_canonical_hash,
)
from .datasets import ATOM_TYPES, BOND_ORDERS, MAX_VALENCE

__all__ = [
    "CostCurve",
    "MMDReport",
    "clustering_histogram",
    "complexity_curve",
    "count_attention_pairs",
    "count_graphlet_orbits",
    "degree_histogram",
    "evaluate_graph_sets",
    "fit_scaling_exponent",
    "gaussian_l2_kernel",
    "gaussian_tv_kernel",
    "mmd_squared",
    "modularity_binary",
    "molecule_metrics",
    "molecule_validity",
    "spectral_bipartition",
    "two_community_fraction",
]


# ---------------------------------------------------------------------------
# per-graph statistics


def degree_histogram(g: Graph) -> np.ndarray:
    """Degree counts normalized to a distribution over degrees 0..max."""
    deg = g.degrees()
    hist = np.bincount(deg, minlength=1).astype(np.float64)
    return hist / hist.sum()


def clustering_histogram(g: Graph, bins: int = 100) -> np.ndarray:
    """Local clustering coefficients binned over [0, 1], sum-normalized."""
    a = g.adjacency()
    deg = a.sum(axis=1)
    triangles = np.diag(a @ a @ a) / 2.0
    possible = deg * (deg - 1.0) / 2.0
    coeff = np.where(possible > 0, triangles / np.maximum(possible, 1e-300), 0.0)
    hist, _ = np.histogram(coeff, bins=bins, range=(0.0, 1.0))
    return hist.astype(np.float64) / g.n_nodes


_ORBIT_COUNT = 15


def count_graphlet_orbits(g: Graph, force: bool = False) -> np.ndarray:
    """(N, 15) orbit counts over connected graphlets of 2 to 4 nodes.

    Orbits follow the standard numbering: 0 edge endpoint; 1/2 path-of-3
    end/center; 3 triangle; 4/5 path-of-4 end/middle; 6/7 star leaf and
    center; 8 4-cycle; 9/10/11 triangle-with-pendant (pendant, far
    triangle nodes, attachment node); 12/13 diamond degree-2/degree-3;
    14 complete-4. Enumeration is exhaustive over node quadruples, which
    is quartic work; graphs beyond 200 nodes are refused unless forced.
    """
    n = g.n_nodes
    if n > 200 and not force:
        raise NumericError(
            f"orbit counting is O(N^4) and N={n} > 200; pass force=True to override"
        )
    a = (g.adjacency() > 0.5)
    counts = np.zeros((n, _ORBIT_COUNT), dtype=np.int64)
    counts[:, 0] = a.sum(axis=1)
    nbrs = [set(np.nonzero(a[i])[0].tolist()) for i in range(n)]

    for trip in itertools.combinations(range(n), 3):
        i, j, k = trip
        e = int(a[i, j]) + int(a[i, k]) + int(a[j, k])
        if e == 3:
            for v in trip:
                counts[v, 3] += 1
        elif e == 2:
            # path: the center is adjacent to both others inside the triple
            for v in trip:
                d = sum(1 for u in trip if u != v and a[v, u])
                counts[v, 2 if d == 2 else 1] += 1

    for quad in itertools.combinations(range(n), 4):
        sub = [(v, sum(1 for u in quad if u != v and a[v, u])) for v in quad]
        degs = sorted(d for _, d in sub)
        e = sum(degs) // 2
        if e < 3 or degs[0] == 0:
            continue  # cannot be a connected graphlet on 4 nodes
        if e == 3:
            if degs == [1, 1, 2, 2]:  # path of 4
                for v, d in sub:
                    counts[v, 4 if d == 1 else 5] += 1
            elif degs == [1, 1, 1, 3]:  # star
                for v, d in sub:
                    counts[v, 6 if d == 1 else 7] += 1
            # [0,1,1,2]-style triangle-plus-isolate is filtered by degs[0]==0
        elif e == 4:
            if degs == [2, 2, 2, 2]:  # 4-cycle
                for v, _ in sub:
                    counts[v, 8] += 1
            else:  # triangle with a pendant: degrees 1,2,2,3
                for v, d in sub:
                    counts[v, 9 if d == 1 else (11 if d == 3 else 10)] += 1
        elif e == 5:  # diamond
            for v, d in sub:
                counts[v, 12 if d == 2 else 13] += 1
        else:  # e == 6, complete
            for v, _ in sub:
                counts[v, 14] += 1
    return counts


def mean_orbit_profile(g: Graph, force: bool = False) -> np.ndarray:
    """Per-node average of the 15 orbit counts; one vector per graph."""
    return count_graphlet_orbits(g, force=force).sum(axis=0) / g.n_nodes


# ---------------------------------------------------------------------------
# kernels and MMD


def gaussian_tv_kernel(x: np.ndarray, y: np.ndarray, sigma: float = 1.0) -> float:
    """exp(-TV(x,y)^2 / 2 sigma^2) on equal-length distributions."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError(f"kernel inputs differ in shape: {x.shape} vs {y.shape}")
    tv = 0.5 * np.abs(x - y).sum()
    return float(np.exp(-(tv * tv) / (2.0 * sigma * sigma)))


def gaussian_l2_kernel(x: np.ndarray, y: np.ndarray, sigma: float = 1.0) -> float:
    """exp(-||x-y||^2 / 2 sigma^2) on equal-length vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError(f"kernel inputs differ in shape: {x.shape} vs {y.shape}")
    d = float(((x - y) ** 2).sum())
    return float(np.exp(-d / (2.0 * sigma * sigma)))


def _pad_pair(x, y):
    m = max(len(x), len(y))
    return (
        np.pad(x, (0, m - len(x))),
        np.pad(y, (0, m - len(y))),
    )


def mmd_squared(xs, ys, kernel) -> float:
    """Biased squared maximum mean discrepancy between two sample sets.

    Diagonal terms are included, so the estimate is non-negative by
    construction. Samples may be variable-length histograms; pairs are
    zero-padded to a common length before the kernel sees them.
    """
    xs = [np.asarray(x, dtype=np.float64) for x in xs]
    ys = [np.asarray(y, dtype=np.float64) for y in ys]
    if not xs or not ys:
        raise ValidationError("mmd needs non-empty sample sets")

    def block_mean(aa, bb):
        total = 0.0
        for a in aa:
            for b in bb:
                pa, pb = _pad_pair(a, b)
                total += kernel(pa, pb)
        return total / (len(aa) * len(bb))

    return block_mean(xs, xs) + block_mean(ys, ys) - 2.0 * block_mean(xs, ys)


@dataclass(frozen=True)
class MMDReport:
    """Squared-MMD summary between a generated and a reference set."""

    degree: float
    clustering: float
    orbit: float

    def as_dict(self):
        return {
            "degree_mmd": self.degree,
            "clustering_mmd": self.clustering,
            "orbit_mmd": self.orbit,
        }


def evaluate_graph_sets(
    generated,
    reference,
    sigma: float = 1.0,
    clustering_bins: int = 100,
    force_orbits: bool = False,
) -> MMDReport:
    """Degree / clustering / orbit MMD between two graph lists."""
    if not generated or not reference:
        raise ValidationError("both graph sets must be non-empty")
    deg = mmd_squared(
        [degree_histogram(g) for g in generated],
        [degree_histogram(g) for g in reference],
        lambda a, b: gaussian_tv_kernel(a, b, sigma),
    )
    clus = mmd_squared(
        [clustering_histogram(g, clustering_bins) for g in generated],
        [clustering_histogram(g, clustering_bins) for g in reference],
        lambda a, b: gaussian_tv_kernel(a, b, sigma),
    )
    orb = mmd_squared(
        [mean_orbit_profile(g, force_orbits) for g in generated],
        [mean_orbit_profile(g, force_orbits) for g in reference],
        lambda a, b: gaussian_l2_kernel(a, b, sigma),
    )
    return MMDReport(degree=deg, clustering=clus, orbit=orb)


# ---------------------------------------------------------------------------
# molecular metrics


def molecule_validity(g: Graph) -> bool:
    """Valence-respecting, connected heavy-atom molecule check.

    Nodes must be one-hot atom types; bond orders come from the one-hot
    edge channels. Valid means every atom's total bond order stays within
    its maximum valence and the molecule is a single connected component.
    """
    nf = g.node_features
    if nf.shape[1] != len(ATOM_TYPES):
        raise ValidationError(
            f"molecular graphs need {len(ATOM_TYPES)} node channels, got {nf.shape[1]}"
        )
    one_hot = np.all(np.isin(nf, (0.0, 1.0))) and np.all(nf.sum(axis=1) == 1.0)
    if not one_hot:
        return False
    atoms = [ATOM_TYPES[int(i)] for i in nf.argmax(axis=1)]
    n = g.n_nodes
    cls = g.edge_attrs.argmax(axis=2)
    order = np.zeros((n, n), dtype=np.int64)
    for ch, bond in BOND_ORDERS.items():
        order[cls == ch] = bond
    np.fill_diagonal(order, 0)
    for i, sym in enumerate(atoms):
        if order[i].sum() > MAX_VALENCE[sym]:
            return False
    if n == 1:
        return True
    # connectivity over bonded pairs
    seen = {0}
    frontier = [0]
    adj = order > 0
    while frontier:
        i = frontier.pop()
        for j in np.nonzero(adj[i])[0]:
            if int(j) not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    return len(seen) == n


def molecule_metrics(generated, training=None):
    """validity%, uniqueness% of valid, novelty% of distinct valid.

    Uniqueness deduplicates valid molecules up to isomorphism; novelty is
    the share of those distinct molecules that match nothing in the
    training set. Novelty is None when no training set is given.
    """
    if not generated:
        raise ValidationError("no generated molecules to score")
    valid = [g for g in generated if molecule_validity(g)]
    validity = 100.0 * len(valid) / len(generated)
    if not valid:
        return {"validity": validity, "uniqueness": 0.0, "novelty": None if training is None else 0.0}
    classes = canonical_partition(valid)
    reps = {}
    for g, c in zip(valid, classes):
        reps.setdefault(c, g)
    distinct = list(reps.values())
    uniqueness = 100.0 * len(distinct) / len(valid)
    novelty = None
    if training is not None:
        train_hashes = {}
        for t in training:
            train_hashes.setdefault(wl_canonical_hash(t), []).append(t)
        novel = 0
        for g in distinct:
            bucket = train_hashes.get(wl_canonical_hash(g), [])
            if not any(graphs_isomorphic(g, t) for t in bucket):
                novel += 1
        novelty = 100.0 * novel / len(distinct)
    return {"validity": validity, "uniqueness": uniqueness, "novelty": novelty}


# ---------------------------------------------------------------------------
# attention-cost counting


def count_attention_pairs(
    regime: str,
    n_nodes: int,
    base_set=(1, 2, 4, 6, 9),
    growth: int = 2,
) -> int:
    """Exact attended (query, key) pairs to emit an n-node graph.

    "node" counts one token per node with full causal attention: the i-th
    emission attends i positions, totalling sum of squares. "scale"
    follows the resolution ladder: all n_k positions of scale k attend
    every position up to and including scale k.
    """
    from .transformer import build_scale_schedule

    if n_nodes < 1:
        raise ValidationError(f"n_nodes must be >= 1, got {n_nodes}")
    if regime == "node":
        return sum(i * i for i in range(1, n_nodes + 1))
    if regime == "scale":
        schedule = build_scale_schedule(n_nodes, base_set=base_set, growth=growth)
        total = 0
        seen = 0
        for n_k in schedule.sizes:
            seen += n_k
            total += n_k * seen
        return total
    raise ValidationError(f"regime must be 'node' or 'scale', got {regime!r}")


@dataclass(frozen=True)
class CostCurve:
    """Attention-pair counts across graph sizes, plus fitted exponents."""

    n_values: tuple
    node_wise: tuple
    scale_wise: tuple
    node_slope: float
    scale_slope: float


def fit_scaling_exponent(n_values, counts) -> float:
    """Least-squares slope of log(count) against log(n).

    Demands at least 4 points spanning a decade of n so the fit means
    something.
    """
    ns = np.asarray(n_values, dtype=np.float64)
    cs = np.asarray(counts, dtype=np.float64)
    if ns.ndim != 1 or ns.shape != cs.shape:
        raise ValidationError("n_values and counts must be matching vectors")
    if ns.size < 4:
        raise ValidationError(f"need at least 4 points for a slope, got {ns.size}")
    if np.any(ns <= 0) or np.any(cs <= 0):
        raise ValidationError("log-log fit needs positive values")
    if ns.max() / ns.min() < 10.0:
        raise ValidationError("n range must span at least a decade")
    slope, _ = np.polyfit(np.log(ns), np.log(cs), deg=1)
    return float(slope)


def complexity_curve(n_values, base_set=(1, 2, 4, 6, 9), growth: int = 2) -> CostCurve:
    """Evaluate both regimes over a size sweep and fit their exponents."""
    ns = sorted(set(int(n) for n in n_values))
    node = [count_attention_pairs("node", n) for n in ns]
    scale = [count_attention_pairs("scale", n, base_set, growth) for n in ns]
    return CostCurve(
        n_values=tuple(ns),
        node_wise=tuple(node),
        scale_wise=tuple(scale),
        node_slope=fit_scaling_exponent(ns, node),
        scale_slope=fit_scaling_exponent(ns, scale),
    )


# ---------------------------------------------------------------------------
# community structure


def spectral_bipartition(g: Graph) -> np.ndarray:
    """Two-way split from the Fiedler vector of the graph Laplacian.

    Uses the sign of the second-smallest eigenvector; degenerate all-one-
    side splits fall back to thresholding at the median entry.
    """
    n = g.n_nodes
    if n < 2:
        raise ValidationError("cannot bipartition fewer than 2 nodes")
    a = g.adjacency()
    lap = np.diag(a.sum(axis=1)) - a
    _, vecs = np.linalg.eigh(lap)
    fiedler = vecs[:, 1]
    labels = (fiedler >= 0).astype(np.int64)
    if labels.min() == labels.max():
        labels = (fiedler >= np.median(fiedler)).astype(np.int64)
    if labels.min() == labels.max():  # perfectly flat vector; split by index
        labels = (np.arange(n) >= n // 2).astype(np.int64)
    return labels


def modularity_binary(g: Graph, labels) -> float:
    """Newman modularity of a labeled split on the binary adjacency."""
    labels = np.asarray(labels)
    a = g.adjacency()
    m2 = a.sum()  # twice the edge count
    if m2 == 0:
        return 0.0
    deg = a.sum(axis=1)
    same = labels[:, None] == labels[None, :]
    q = ((a - np.outer(deg, deg) / m2) * same).sum() / m2
    return float(q)


def two_community_fraction(graphs, threshold: float = 0.2) -> float:
    """Share of graphs whose spectral 2-split clears a modularity bar."""
    if not graphs:
        raise ValidationError("empty graph list")
    hits = 0
    for g in graphs:
        if g.n_nodes < 2 or g.n_edges == 0:
            continue
        q = modularity_binary(g, spectral_bipartition(g))
        if q > threshold:
            hits += 1
    return hits / len(graphs)
