"""Matplotlib figures written next to the text/CSV reports."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_curve(losses, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(np.arange(1, len(losses) + 1), losses, marker="o", ms=2, lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean training loss")
        return _save(fig, path)


def plot_trajectory(t_true: np.ndarray, t_pred: np.ndarray, path, reference: np.ndarray | None = None) -> Path:
    """Ground truth in bold blue, predictions in thin red (top-down)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        if reference is not None:
            ax.scatter(reference[:, 0], reference[:, 1], s=1, c="0.8", label="train poses")
        ax.plot(t_true[:, 0], t_true[:, 1], "o", color="tab:blue", ms=3, label="ground truth")
        ax.plot(t_pred[:, 0], t_pred[:, 1], "o", color="tab:red", ms=1.5, label="prediction")
        for gt, pr in zip(t_true, t_pred):
            ax.plot([gt[0], pr[0]], [gt[1], pr[1]], color="tab:red", lw=0.4, alpha=0.6)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend(loc="best", frameon=False)
        return _save(fig, path)


def plot_ablation(rows, path) -> Path:
    """Bar chart of mean translation and rotation error per preset."""
    names = [name for name, _ in rows]
    t = [r.mean_t for _, r in rows]
    rot = [r.mean_r for _, r in rows]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(5, 0.7 * len(rows) + 3), 3))
        x = np.arange(len(rows))
        ax1.bar(x, t, color="tab:blue")
        ax1.set_ylabel("mean translation error [m]")
        ax2.bar(x, rot, color="tab:orange")
        ax2.set_ylabel("mean rotation error [deg]")
        for ax in (ax1, ax2):
            ax.set_xticks(x)
            ax.set_xticklabels(names, rotation=45, ha="right")
        fig.tight_layout()
        return _save(fig, path)


def plot_outlier_sweep(reports, path) -> Path:
    labels = ["none" if r.threshold is None or math.isinf(r.threshold) else f"{r.threshold:g}" for r in reports]
    with plt.rc_context(STYLE):
        fig, ax1 = plt.subplots(figsize=(4.5, 3))
        x = np.arange(len(reports))
        ax1.plot(x, [r.mean_t for r in reports], marker="o", color="tab:blue")
        ax1.set_ylabel("mean translation error [m]", color="tab:blue")
        ax2 = ax1.twinx()
        ax2.plot(x, [100 * r.retained_fraction for r in reports], marker="s", color="tab:green")
        ax2.set_ylabel("retained poses [%]", color="tab:green")
        ax1.set_xticks(x)
        ax1.set_xticklabels(labels)
        ax1.set_xlabel("outlier threshold [m]")
        return _save(fig, path)
