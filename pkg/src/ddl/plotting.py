"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ddl.formats import mosaic  # noqa: E402

RC_PARAMS = {
    "axes.spines.right": False,
    "axes.spines.top": False,
    "figure.dpi": 100,
    "font.size": 9,
    "legend.frameon": False,
}


def savefig(fig, path, dpi: int = 120) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=dpi, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_trace(trace, path, title: str = "") -> Path:
    """Reconstruction error, consensus and distance to truth against iteration."""
    nodes = sorted({r.node for r in trace.rows})
    has_truth = not np.all(np.isnan(trace.column("dict_dist_true")))
    panels = 3 if has_truth else 2
    with plt.rc_context(RC_PARAMS):
        fig, axes = plt.subplots(1, panels, figsize=(3.2 * panels, 2.8))
        for n in nodes:
            its = [r.iter for r in trace.rows if r.node == n]
            axes[0].semilogy(its, trace.column("recon_mse", n), lw=1, label=f"node {n}")
            if has_truth:
                axes[2].plot(its, trace.column("dict_dist_true", n), lw=1)
        its0 = [r.iter for r in trace.rows if r.node == nodes[0]]
        cons = np.maximum(trace.column("consensus", nodes[0]), 1e-16)
        axes[1].semilogy(its0, cons, color="k", lw=1)
        axes[0].set(xlabel="iteration", ylabel="reconstruction MSE")
        axes[1].set(xlabel="iteration", ylabel="consensus disagreement")
        if has_truth:
            axes[2].set(xlabel="iteration", ylabel="distance to true dictionary")
        if len(nodes) > 1:
            axes[0].legend(fontsize=7)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
    return savefig(fig, path)


def plot_dictionaries(dicts: Mapping[str, np.ndarray], path) -> Path:
    """Side-by-side atom mosaics, one panel per labelled dictionary."""
    with plt.rc_context(RC_PARAMS):
        fig, axes = plt.subplots(1, len(dicts), figsize=(2.6 * len(dicts), 2.8), squeeze=False)
        for ax, (label, D) in zip(axes[0], dicts.items()):
            ax.imshow(mosaic(D), cmap="gray", interpolation="nearest", vmin=0, vmax=255)
            ax.set_title(label)
            ax.set_axis_off()
        fig.tight_layout()
    return savefig(fig, path)


def plot_patches(Y, path, n_patches: int = 36) -> Path:
    return plot_dictionaries({"example patches": np.asarray(Y)[:, :n_patches]}, path)


def plot_comparison(labels: Sequence[str], distances: Sequence[Sequence[float]], mses: Sequence[float], path) -> Path:
    """Per-node distance to truth and mean reconstruction MSE for several runs."""
    with plt.rc_context(RC_PARAMS):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(7, 2.8))
        for i, d in enumerate(distances):
            ax0.scatter(np.full(len(d), i), d, s=14)
        ax0.set_xticks(range(len(labels)), labels, rotation=20)
        ax0.set_ylabel("distance to true dictionary")
        ax1.bar(range(len(labels)), mses, color="0.6")
        ax1.set_xticks(range(len(labels)), labels, rotation=20)
        ax1.set_ylabel("mean reconstruction MSE")
        fig.tight_layout()
    return savefig(fig, path)
