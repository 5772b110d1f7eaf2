"""Figure rendering for the CLI report paths (matplotlib, Agg backend).

Every report that emits a delimited table also renders a figure next to
it: per-scene quality bars for eval, cost curves for the profiler table,
the loss/validation history for training, and error-map mosaics.
"""

from __future__ import annotations

from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "save_metrics_figure",
    "save_profile_figure",
    "save_training_figure",
    "save_errmap_figure",
]


def save_metrics_figure(by_dataset: Dict[str, Sequence], path: str) -> None:
    """Bar chart of per-scene PSNR grouped by dataset, SSIM on a twin axis."""
    labels, psnrs, ssims, edges = [], [], [], []
    for ds in sorted(by_dataset):
        edges.append(len(labels))
        for s in by_dataset[ds]:
            labels.append(f"{ds}/{s.scene_id}")
            psnrs.append(s.psnr_scene)
            ssims.append(s.ssim_scene)
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(labels) + 2.0), 4.0))
    ax.bar(x, psnrs, color="#4878d0", label="PSNR (dB)")
    ax.set_ylabel("PSNR (dB)")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    for e in edges[1:]:
        ax.axvline(e - 0.5, color="0.7", lw=0.8, ls=":")
    ax2 = ax.twinx()
    ax2.plot(x, ssims, "o-", color="#d65f5f", ms=4, lw=1.0, label="SSIM")
    ax2.set_ylabel("SSIM")
    ax.set_title("Per-scene quality")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_profile_figure(rows: List[dict], path: str) -> None:
    """Parameter and FLOP totals per configuration, side by side."""
    names = [r["name"] for r in rows]
    params = [r["params"] / 1e6 for r in rows]
    flops = [r["flops"] / 1e9 for r in rows]
    x = np.arange(len(names))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ax1.bar(x, params, color="#4878d0")
    ax1.set_xticks(x)
    ax1.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax1.set_ylabel("parameters (M)")
    ax2.bar(x, flops, color="#6acc64")
    ax2.set_xticks(x)
    ax2.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax2.set_ylabel("forward FLOPs (G)")
    fig.suptitle("Model cost by configuration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_figure(history: List[dict], path: str) -> None:
    steps = [row["step"] for row in history]
    losses = [row["loss"] for row in history]
    fig, ax = plt.subplots(figsize=(7.0, 3.6))
    ax.plot(steps, losses, lw=0.9, color="#4878d0")
    ax.set_xlabel("step")
    ax.set_ylabel("L1 loss")
    ax.set_yscale("log")
    ax.set_title("Training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_errmap_figure(err: np.ndarray, path: str) -> None:
    """Mosaic of per-view error heatmaps (values already scaled to [0, 1])."""
    u, v = err.shape[0], err.shape[1]
    fig, axes = plt.subplots(v, u, figsize=(2.2 * u, 2.2 * v), squeeze=False)
    for iu in range(u):
        for iv in range(v):
            ax = axes[iv][iu]
            im = ax.imshow(err[iu, iv], cmap="inferno", vmin=0.0, vmax=1.0)
            ax.set_xticks([])
            ax.set_yticks([])
            ax.set_title(f"view {iu},{iv}", fontsize=7)
    fig.colorbar(im, ax=[a for row in axes for a in row], shrink=0.8, label="|error| / 0.1")
    fig.savefig(path, dpi=120)
    plt.close(fig)
