"""Matplotlib figures written next to the CSV/Markdown outputs."""

from __future__ import annotations

import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.labelsize": "medium",
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_sweep(summary: list[dict], axis: str, title: str, path) -> Path:
    """RA (mean ± std over seeds) against the swept hyperparameter."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        x = np.array([s["axis_value"] for s in summary], dtype=float)
        y = np.array([s["RA_mean"] for s in summary], dtype=float)
        e = np.array([s["RA_std"] for s in summary], dtype=float)
        ax.errorbar(x, y, yerr=e, marker="o", capsize=3)
        if axis != "glances" and np.all(x > 0) and x.max() / x.min() >= 10:
            ax.set_xscale("log")
        ax.set_xlabel(axis)
        ax.set_ylabel("retained accuracy (%)")
        ax.set_title(title)
        return _save(fig, path)


def plot_benchmark_summary(rows: list[dict], benchmark: str, path) -> Path:
    """Side-by-side RA and BTI bars per variant."""
    with plt.rc_context(STYLE):
        fig, (ax_ra, ax_bti) = plt.subplots(1, 2, figsize=(8, 3.5))
        labels = [r["variant"] for r in rows]
        pos = np.arange(len(rows))
        ax_ra.bar(pos, [r["ra_mean"] for r in rows], yerr=[r["ra_std"] for r in rows], capsize=3, color="C0")
        ax_bti.bar(pos, [r["bti_mean"] for r in rows], yerr=[r["bti_std"] for r in rows], capsize=3, color="C3")
        for ax, name in ((ax_ra, "RA (%)"), (ax_bti, "BTI (points)")):
            ax.set_xticks(pos)
            ax.set_xticklabels(labels, rotation=30, ha="right")
            ax.set_ylabel(name)
        ax_bti.axhline(0.0, color="k", lw=0.8)
        fig.suptitle(benchmark)
        return _save(fig, path)


def plot_accuracy_matrices(records, path) -> Path:
    """Seed-averaged accuracy matrix per variant as heatmaps."""
    by_variant: dict[str, list[np.ndarray]] = {}
    for r in records:
        m = np.array([[np.nan if v is None else v for v in row] for row in r.accuracy], dtype=float)
        by_variant.setdefault(r.config["variant"], []).append(m)
    names = sorted(by_variant)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.0), squeeze=False)
        for ax, name in zip(axes[0], names):
            shapes = {m.shape for m in by_variant[name]}
            mats = [m for m in by_variant[name] if m.shape == max(shapes)]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mean = np.nanmean(np.stack(mats), axis=0) if len(mats) > 1 else mats[0]
            im = ax.imshow(mean * 100, vmin=0, vmax=100, cmap="viridis")
            ax.set_title(name)
            ax.set_xlabel("evaluated task")
            ax.set_ylabel("after training task")
        fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8, label="accuracy (%)")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path)
        plt.close(fig)
        return path
