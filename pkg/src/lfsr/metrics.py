"""Luma-channel quality metrics, per-scene scoring, and report emission.

PSNR pools the squared error over all views of a scene by default (a
per-view-mean alternative is available); SSIM uses the standard 11x11
Gaussian window (sigma 1.5, K1 0.01, K2 0.03, data range 1.0) aggregated
over the valid region only. Aggregation across datasets is the two-stage
unweighted mean: scenes first, then datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from scipy.ndimage import correlate1d

__all__ = [
    "PSNR_CAP",
    "psnr",
    "psnr_flagged",
    "ssim",
    "SceneScore",
    "score_scene",
    "aggregate",
    "error_map",
    "scores_to_tsv",
    "scores_to_kv",
]

PSNR_CAP = 99.0

_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def psnr_flagged(a: np.ndarray, b: np.ndarray, peak: float = 1.0):
    """Returns (dB, identical). Identical inputs report the 99 dB cap."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP, True
    return 10.0 * math.log10(peak * peak / mse), False


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    return psnr_flagged(a, b, peak)[0]


def _gaussian_window(n: int, sigma: float) -> np.ndarray:
    x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _window_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable correlation; margins cropped afterwards so the boundary
    # mode never reaches the valid region
    out = correlate1d(img, kernel, axis=0, mode="nearest")
    out = correlate1d(out, kernel, axis=1, mode="nearest")
    r = len(kernel) // 2
    return out[r:-r, r:-r]


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean local structural similarity of two single-channel images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if b.ndim == 3 and b.shape[2] == 1:
        b = b[:, :, 0]
    _check_same_shape(a, b, "ssim")
    if a.ndim != 2:
        raise ValueError(f"ssim: expected single-channel 2-D images, got {a.shape}")
    if min(a.shape) < _SSIM_WIN:
        raise ValueError(f"ssim: image {a.shape} smaller than the {_SSIM_WIN}x{_SSIM_WIN} window")
    kernel = _gaussian_window(_SSIM_WIN, _SSIM_SIGMA)
    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2
    mu_a = _window_mean(a, kernel)
    mu_b = _window_mean(b, kernel)
    var_a = _window_mean(a * a, kernel) - mu_a * mu_a
    var_b = _window_mean(b * b, kernel) - mu_b * mu_b
    cov = _window_mean(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class SceneScore:
    scene_id: str
    psnr_views: List[float] = field(default_factory=list)
    ssim_views: List[float] = field(default_factory=list)
    psnr_scene: float = 0.0
    ssim_scene: float = 0.0
    identical: bool = False


def score_scene(
    reference: np.ndarray,
    reconstruction: np.ndarray,
    scene_id: str = "scene",
    view_psnr_mode: str = "pooled",
) -> SceneScore:
    """Score one scene on the luma channel.

    ``view_psnr_mode``: "pooled" computes the scene PSNR from the squared
    error pooled over all views; "mean" averages per-view PSNRs instead.
    """
    ref = np.asarray(reference, dtype=np.float64)
    rec = np.asarray(reconstruction, dtype=np.float64)
    _check_same_shape(ref, rec, "score_scene")
    if ref.ndim != 5:
        raise ValueError(f"score_scene expects (U,V,H,W,C), got {ref.shape}")
    if view_psnr_mode not in ("pooled", "mean"):
        raise ValueError(f"unknown view_psnr_mode {view_psnr_mode!r}")
    score = SceneScore(scene_id)
    for u in range(ref.shape[0]):
        for v in range(ref.shape[1]):
            score.psnr_views.append(psnr(ref[u, v], rec[u, v]))
            score.ssim_views.append(ssim(ref[u, v, :, :, 0], rec[u, v, :, :, 0]))
    scene_db, identical = psnr_flagged(ref, rec)
    score.identical = identical
    score.psnr_scene = (
        scene_db if view_psnr_mode == "pooled" else float(np.mean(score.psnr_views))
    )
    score.ssim_scene = float(np.mean(score.ssim_views))
    return score


def aggregate(by_dataset: Dict[str, Sequence[SceneScore]]) -> Dict[str, float]:
    """Two-stage unweighted mean: scenes within a dataset, then datasets."""
    if not by_dataset:
        raise ValueError("aggregate: no datasets")
    ds_psnr, ds_ssim = [], []
    for name, scores in by_dataset.items():
        if not scores:
            raise ValueError(f"aggregate: dataset {name!r} has no scenes")
        ds_psnr.append(float(np.mean([s.psnr_scene for s in scores])))
        ds_ssim.append(float(np.mean([s.ssim_scene for s in scores])))
    return {
        "psnr": float(np.mean(ds_psnr)),
        "ssim": float(np.mean(ds_ssim)),
        "datasets": len(ds_psnr),
        "scenes": sum(len(s) for s in by_dataset.values()),
    }


def error_map(reference: np.ndarray, reconstruction: np.ndarray, scale_max: float = 0.1):
    """Per-view absolute-error heat images, linearly scaled to [0, scale_max]
    and clamped; returned as (U, V, H, W) values in [0, 1]."""
    ref = np.asarray(reference, dtype=np.float64)
    rec = np.asarray(reconstruction, dtype=np.float64)
    _check_same_shape(ref, rec, "error_map")
    err = np.abs(ref - rec)
    if err.ndim == 5:
        err = err.mean(axis=-1)
    return np.clip(err / scale_max, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Report emission


def scores_to_tsv(by_dataset: Dict[str, Sequence[SceneScore]]) -> str:
    lines = ["dataset\tscene\tpsnr\tssim\tidentical"]
    for ds in sorted(by_dataset):
        for s in by_dataset[ds]:
            lines.append(
                f"{ds}\t{s.scene_id}\t{s.psnr_scene:.4f}\t{s.ssim_scene:.5f}\t{int(s.identical)}"
            )
    overall = aggregate(by_dataset)
    for ds in sorted(by_dataset):
        scores = by_dataset[ds]
        lines.append(
            f"{ds}\t<mean>\t{np.mean([s.psnr_scene for s in scores]):.4f}\t"
            f"{np.mean([s.ssim_scene for s in scores]):.5f}\t"
        )
    lines.append(f"<all>\t<mean>\t{overall['psnr']:.4f}\t{overall['ssim']:.5f}\t")
    return "\n".join(lines) + "\n"


def scores_to_kv(by_dataset: Dict[str, Sequence[SceneScore]]) -> str:
    overall = aggregate(by_dataset)
    lines = []
    for ds in sorted(by_dataset):
        scores = by_dataset[ds]
        for s in scores:
            lines.append(f"scene.{ds}.{s.scene_id}.psnr {s.psnr_scene:.6f}")
            lines.append(f"scene.{ds}.{s.scene_id}.ssim {s.ssim_scene:.6f}")
        lines.append(f"dataset.{ds}.psnr {np.mean([s.psnr_scene for s in scores]):.6f}")
        lines.append(f"dataset.{ds}.ssim {np.mean([s.ssim_scene for s in scores]):.6f}")
    lines.append(f"overall.psnr {overall['psnr']:.6f}")
    lines.append(f"overall.ssim {overall['ssim']:.6f}")
    lines.append(f"overall.datasets {overall['datasets']}")
    lines.append(f"overall.scenes {overall['scenes']}")
    return "\n".join(lines) + "\n"
