"""Matplotlib figures for ablation tables, aspect importance and edge-feature heatmaps."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRICS = ("HR@5", "HR@10", "HR@20", "nDCG@5", "nDCG@10", "nDCG@20")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100, bbox_inches="tight")
    plt.close(fig)


def plot_ablation(rows: Sequence[dict], axis: str, path, metrics=METRICS):
    """One line per metric against the ablated value (categorical x for GNN variants)."""
    labels = [str(r["value"]) for r in rows]
    x = np.arange(len(rows))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharex=True)
    for ax, family in zip(axes, ("HR", "nDCG")):
        for m in metrics:
            if m.startswith(family + "@"):
                ax.plot(x, [r[m] for r in rows], marker="o", label=m)
        ax.set_xticks(x, labels)
        ax.set_xlabel(axis)
        ax.set_ylabel(family)
        ax.legend(frameon=False, fontsize=8)
        ax.grid(alpha=0.3)
    _save(fig, path)


def plot_aspect_importance(means: dict[str, np.ndarray], path):
    """Grouped bars of mean attention per aspect for learners and KCs."""
    sides = list(means)
    n = len(next(iter(means.values())))
    x = np.arange(n)
    width = 0.8 / len(sides)
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * n + 2), 3.5))
    for j, side in enumerate(sides):
        ax.bar(x + j * width - 0.4 + width / 2, means[side], width, label=side)
    ax.axhline(1.0 / n, color="k", lw=0.8, ls="--", label="uniform")
    ax.set_xticks(x, [f"a{i + 1}" for i in range(n)])
    ax.set_ylabel("mean attention")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def plot_heatmap(matrix: np.ndarray, path, row_labels: Sequence[str] | None = None, title: str = ""):
    matrix = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(max(4, 0.12 * matrix.shape[1] + 2), max(2, 0.3 * matrix.shape[0] + 1)))
    im = ax.imshow(matrix, aspect="auto", cmap="viridis")
    fig.colorbar(im, ax=ax, fraction=0.04)
    if row_labels is not None and len(row_labels) <= 40:
        ax.set_yticks(np.arange(len(row_labels)), row_labels, fontsize=7)
    ax.set_xlabel("feature dimension")
    if title:
        ax.set_title(title, fontsize=9)
    _save(fig, path)
