"""Figure rendering for the report path: every CSV artifact gets a PNG twin."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(x) if x else np.nan for x in row] for row in rows[1:]])
    return header, data


def render_training_curves(outdir: Path) -> Path | None:
    metrics = outdir / "metrics.csv"
    if not metrics.exists():
        return None
    header, data = _read_csv(metrics)
    if data.size == 0:
        return None
    step = data[:, header.index("step")]
    panels = ["mean_episode_reward", "kl_old_new", "sample_variance_psi2",
              "entropy"]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, col in zip(axes.ravel(), panels):
        ax.plot(step, data[:, header.index(col)], lw=1.2)
        ax.set_title(col)
        ax.grid(alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("env steps")
    fig.tight_layout()
    out = outdir / "training_curves.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_curve(path_csv: Path, out_png: Path, xlabel: str, ylabel: str,
                 logx: bool = False) -> Path:
    header, data = _read_csv(path_csv)
    x, mean = data[:, 0], data[:, 1]
    stderr = data[:, 2] if data.shape[1] > 2 else np.zeros_like(mean)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(x, mean, yerr=stderr, marker="o", capsize=3)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def render_histogram(counts: list[int], edges: list[float], out_png: Path,
                     xlabel: str, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    widths = np.diff(edges)
    ax.bar(edges[:-1], counts, width=widths, align="edge",
           edgecolor="black", alpha=0.75)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("levels")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def render_confusion(deltas_by_episode: dict[int, list[float]],
                     contributions: dict[int, np.ndarray],
                     out_png: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    all_deltas = [d for ds in deltas_by_episode.values() for d in ds]
    ax1.hist(all_deltas, bins=20, edgecolor="black", alpha=0.75)
    ax1.set_xlabel("per-step confusion")
    ax1.set_ylabel("steps")
    episodes = sorted(contributions)
    mat = np.stack([contributions[e] for e in episodes])
    im = ax2.imshow(mat, aspect="auto", cmap="viridis")
    ax2.set_xlabel("cluster")
    ax2.set_ylabel("episode")
    fig.colorbar(im, ax=ax2, label="contribution")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png
