"""Figures written next to the CSV reports (Agg backend, PNG only)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CHANNEL_COLORS = ("tab:red", "tab:green", "tab:blue")

plt.rcParams.update({
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "dehazekit",
})


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_histograms(hists: dict[str, np.ndarray], path) -> Path:
    """One panel per image, each showing the three channel distributions."""
    names = list(hists)
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 2.6), sharey=True, squeeze=False)
    for ax, name in zip(axes[0], names):
        h = hists[name].astype(np.float64)
        bins = h.shape[1]
        centers = (np.arange(bins) + 0.5) / bins
        for k, color in enumerate(CHANNEL_COLORS):
            ax.plot(centers, h[k] / max(h[k].sum(), 1.0), color=color, lw=1.2)
        ax.set_title(name)
        ax.set_xlabel("intensity")
        ax.set_xlim(0, 1)
    axes[0][0].set_ylabel("fraction of pixels")
    fig.tight_layout()
    return _save(fig, path)


def plot_channel_diffs(rows: list[tuple[str, tuple[float, float, float]]], path) -> Path:
    fig, ax = plt.subplots(figsize=(4.0, 2.6))
    x = np.arange(len(rows))
    for k, color in enumerate(CHANNEL_COLORS):
        ax.bar(x + (k - 1) * 0.25, [d[k] for _, d in rows], 0.25, color=color, label="RGB"[k])
    ax.set_xticks(x, [name for name, _ in rows])
    ax.set_ylabel("mean |difference| (0-255)")
    ax.legend(frameon=False, ncol=3)
    fig.tight_layout()
    return _save(fig, path)


def plot_loss_curves(history: list[tuple], path, columns: list[str]) -> Path:
    h = np.asarray(history, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4.8, 3.0))
    for j, name in enumerate(columns[1:], start=1):
        vals = np.maximum(h[:, j], 1e-12)
        ax.plot(h[:, 0], vals, lw=1.6 if name == "total" else 0.9, label=name,
                color="black" if name == "total" else None)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return _save(fig, path)
