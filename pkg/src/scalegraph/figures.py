"""Matplotlib renderings for reports: distribution overlays, cost curves,
training traces, and sample galleries. Everything is written to files
with the Agg backend, never shown.
"""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import networkx as nx
import numpy as np

from .graphs import to_networkx
from .metrics import (
    CostCurve,
    clustering_histogram,
    degree_histogram,
    mean_orbit_profile,
)

__all__ = [
    "save_cost_figure",
    "save_evaluation_figures",
    "save_sample_gallery",
    "save_training_figure",
]


def _mean_padded(hists):
    m = max(len(h) for h in hists)
    return np.mean([np.pad(h, (0, m - len(h))) for h in hists], axis=0)


def save_evaluation_figures(generated, reference, outdir, force_orbits=False):
    """Overlay generated vs reference statistics; returns written paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []

    deg_g = _mean_padded([degree_histogram(g) for g in generated])
    deg_r = _mean_padded([degree_histogram(g) for g in reference])
    m = max(len(deg_g), len(deg_r))
    deg_g = np.pad(deg_g, (0, m - len(deg_g)))
    deg_r = np.pad(deg_r, (0, m - len(deg_r)))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = np.arange(m)
    ax.bar(xs - 0.2, deg_r, width=0.4, label="reference", color="#4878a8")
    ax.bar(xs + 0.2, deg_g, width=0.4, label="generated", color="#d1605e")
    ax.set_xlabel("degree")
    ax.set_ylabel("mean frequency")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = os.path.join(outdir, "degree_distribution.png")
    fig.savefig(p, dpi=150)
    plt.close(fig)
    paths.append(p)

    clus_g = _mean_padded([clustering_histogram(g) for g in generated])
    clus_r = _mean_padded([clustering_histogram(g) for g in reference])
    centers = (np.arange(100) + 0.5) / 100.0
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(centers, clus_r, label="reference", color="#4878a8")
    ax.plot(centers, clus_g, label="generated", color="#d1605e")
    ax.set_xlabel("clustering coefficient")
    ax.set_ylabel("mean frequency")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = os.path.join(outdir, "clustering_distribution.png")
    fig.savefig(p, dpi=150)
    plt.close(fig)
    paths.append(p)

    orb_g = np.mean([mean_orbit_profile(g, force_orbits) for g in generated], axis=0)
    orb_r = np.mean([mean_orbit_profile(g, force_orbits) for g in reference], axis=0)
    xs = np.arange(len(orb_g))
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(xs - 0.2, orb_r, width=0.4, label="reference", color="#4878a8")
    ax.bar(xs + 0.2, orb_g, width=0.4, label="generated", color="#d1605e")
    ax.set_xlabel("orbit id")
    ax.set_ylabel("mean count per node")
    ax.set_yscale("symlog")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = os.path.join(outdir, "orbit_profile.png")
    fig.savefig(p, dpi=150)
    plt.close(fig)
    paths.append(p)

    paths.append(save_sample_gallery(generated, os.path.join(outdir, "samples.png")))
    return paths


def save_sample_gallery(graphs, path, max_graphs: int = 12):
    """Small grid of spring-layout drawings."""
    shown = graphs[:max_graphs]
    cols = 4
    rows = max(1, (len(shown) + cols - 1) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 2.5 * rows))
    axes = np.atleast_1d(axes).reshape(-1)
    for ax in axes:
        ax.axis("off")
    for ax, g in zip(axes, shown):
        gx = to_networkx(g)
        pos = nx.spring_layout(gx, seed=0)
        nx.draw_networkx(
            gx, pos=pos, ax=ax, with_labels=False, node_size=40,
            node_color="#4878a8", edge_color="#999999", width=0.8,
        )
        ax.set_title(f"n={g.n_nodes}", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_cost_figure(curve: CostCurve, path):
    """Log-log attended-pairs comparison with fitted slopes in the legend."""
    fig, ax = plt.subplots(figsize=(5, 3.8))
    ax.loglog(
        curve.n_values, curve.node_wise, "o-", color="#d1605e",
        label=f"node-by-node (slope {curve.node_slope:.2f})",
    )
    ax.loglog(
        curve.n_values, curve.scale_wise, "s-", color="#4878a8",
        label=f"scale-by-scale (slope {curve.scale_slope:.2f})",
    )
    ax.set_xlabel("graph size n")
    ax.set_ylabel("attended pairs")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_training_figure(history, path, accuracy_label="accuracy"):
    """Loss and accuracy traces over epochs from history rows."""
    epochs = [row["epoch"] for row in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(epochs, [row["loss"] for row in history], color="#d1605e")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax2.plot(epochs, [row["accuracy"] for row in history], color="#4878a8")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel(accuracy_label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
