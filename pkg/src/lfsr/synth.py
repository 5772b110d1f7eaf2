"""Synthetic light-field scenes with analytically known disparity.

A scene is a front-to-back list of textured fronto-parallel layers. View
(u, v) of a layer with disparity d shows the layer texture shifted by
(d*(u - u_c), d*(v - v_c)) pixels, the center view staying unshifted, so
every scene point traces an epipolar line of slope exactly d. Shifts are
realized as integer crops of a supersampled texture canvas, which makes
the slope relation hold bit-exactly for integer and rational disparities
alike. Generation is deterministic: all randomness comes from one PCG64
generator seeded per scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

__all__ = [
    "LayerSpec",
    "SceneSpec",
    "generate",
    "random_scene_specs",
    "parse_scene_file",
    "scene_to_text",
]

MAX_SUPERSAMPLE = 16


@dataclass
class LayerSpec:
    texture: str  # checker | sinusoid | noise
    disparity: Fraction = Fraction(0)
    mask: str = "full"  # full | disk:cx,cy,r | rect:x0,y0,x1,y1 (relative coords)
    scale: float = 6.0  # checker cell size, pixels
    fx: float = 0.12  # sinusoid frequencies, cycles per pixel
    fy: float = 0.05
    phase: float = 0.0
    smooth: float = 2.0  # noise box-filter width, pixels
    low: float = 0.1
    high: float = 0.9

    def __post_init__(self):
        self.disparity = Fraction(self.disparity)
        if self.texture not in ("checker", "sinusoid", "noise"):
            raise ValueError(f"unknown texture {self.texture!r}")


@dataclass
class SceneSpec:
    u: int
    v: int
    h: int
    w: int
    seed: int = 0
    layers: List[LayerSpec] = field(default_factory=list)

    def validate(self) -> None:
        if not self.layers:
            raise ValueError("scene needs at least one layer")
        for lay in self.layers:
            if abs(lay.disparity) * max(self.u, self.v) >= Fraction(min(self.h, self.w), 2):
                raise ValueError(
                    f"disparity {lay.disparity} too large for extents "
                    f"{self.u}x{self.v} views of {self.h}x{self.w}: shift leaves the frame"
                )


def _supersample_factor(spec: SceneSpec) -> int:
    q = 1
    ang_den = 2 if (spec.u % 2 == 0 or spec.v % 2 == 0) else 1
    for lay in spec.layers:
        q = math.lcm(q, lay.disparity.denominator * ang_den)
    if q > MAX_SUPERSAMPLE:
        raise ValueError(f"disparity denominators need supersampling {q} > {MAX_SUPERSAMPLE}")
    return q


def _texture_canvas(lay: LayerSpec, ys: np.ndarray, xs: np.ndarray, rng) -> np.ndarray:
    yy = ys[:, None]
    xx = xs[None, :]
    if lay.texture == "checker":
        par = (np.floor(yy / lay.scale) + np.floor(xx / lay.scale)) % 2
        return np.where(par > 0.5, lay.high, lay.low)
    if lay.texture == "sinusoid":
        s = np.sin(2.0 * math.pi * (lay.fx * xx + lay.fy * yy) + lay.phase)
        return 0.5 + 0.4 * s * np.ones_like(yy)
    # smoothed white noise on the supersampled lattice
    q = round(1.0 / (xs[1] - xs[0])) if len(xs) > 1 else 1
    noise = rng.random((len(ys), len(xs)))
    width = max(1, int(round(lay.smooth * q)))
    sm = uniform_filter(noise, size=width, mode="nearest")
    lo, hi = sm.min(), sm.max()
    span = hi - lo if hi > lo else 1.0
    return lay.low + (lay.high - lay.low) * (sm - lo) / span


def _mask_canvas(lay: LayerSpec, ys, xs, h, w) -> np.ndarray:
    if lay.mask == "full":
        return np.ones((len(ys), len(xs)), dtype=bool)
    kind, _, args = lay.mask.partition(":")
    vals = [float(a) for a in args.split(",")] if args else []
    yy = ys[:, None]
    xx = xs[None, :]
    if kind == "disk" and len(vals) == 3:
        cx, cy, r = vals
        rad = r * min(h, w)
        return (xx - cx * w) ** 2 + (yy - cy * h) ** 2 <= rad * rad
    if kind == "rect" and len(vals) == 4:
        x0, y0, x1, y1 = vals
        return (xx >= x0 * w) & (xx < x1 * w) & (yy >= y0 * h) & (yy < y1 * h)
    raise ValueError(f"unknown mask spec {lay.mask!r}")


def generate(spec: SceneSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Render a scene. Returns (light field (U,V,H,W,1) float32 in [0,1],
    center-view disparity map (H,W) float64)."""
    spec.validate()
    q = _supersample_factor(spec)
    uc = Fraction(spec.u - 1, 2)
    vc = Fraction(spec.v - 1, 2)
    max_off = max(
        (abs(lay.disparity) * max(uc, vc) for lay in spec.layers), default=Fraction(0)
    )
    pad = int(math.ceil(max_off)) + 1

    fine_h = (spec.h + 2 * pad) * q
    fine_w = (spec.w + 2 * pad) * q
    ys = (np.arange(fine_h, dtype=np.float64) / q) - pad
    xs = (np.arange(fine_w, dtype=np.float64) / q) - pad

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    canvases = []
    for lay in spec.layers:
        tex = _texture_canvas(lay, ys, xs, rng)
        msk = _mask_canvas(lay, ys, xs, spec.h, spec.w)
        canvases.append((tex, msk, lay.disparity))

    lf = np.zeros((spec.u, spec.v, spec.h, spec.w, 1), dtype=np.float32)
    ygrid = q * np.arange(spec.h)
    xgrid = q * np.arange(spec.w)
    for iu in range(spec.u):
        for iv in range(spec.v):
            view = np.zeros((spec.h, spec.w), dtype=np.float64)
            # paint back to front; the first listed layer is the frontmost
            for tex, msk, d in reversed(canvases):
                dx = d * (iu - uc)
                dy = d * (iv - vc)
                sx = pad * q - int(dx * q)
                sy = pad * q - int(dy * q)
                t = tex[np.ix_(sy + ygrid, sx + xgrid)]
                m = msk[np.ix_(sy + ygrid, sx + xgrid)]
                view = np.where(m, t, view)
            lf[iu, iv, :, :, 0] = view

    # ground truth at the center view: frontmost covering layer wins
    disp = np.zeros((spec.h, spec.w), dtype=np.float64)
    assigned = np.zeros((spec.h, spec.w), dtype=bool)
    sx0, sy0 = pad * q, pad * q
    for tex, msk, d in canvases:
        m = msk[np.ix_(sy0 + ygrid, sx0 + xgrid)]
        take = m & ~assigned
        disp[take] = float(d)
        assigned |= take
    return np.clip(lf, 0.0, 1.0), disp


def random_scene_specs(
    count: int,
    seed: int,
    u: int = 3,
    v: int = 3,
    h: int = 48,
    w: int = 48,
    disparities=(0, 1, 2),
) -> List[SceneSpec]:
    """Deterministic family of mixed-texture scenes for training fixtures."""
    master = np.random.Generator(np.random.PCG64(seed))
    specs = []
    for i in range(count):
        scene_seed = int(master.integers(0, 2**31 - 1))
        rng = np.random.Generator(np.random.PCG64(scene_seed))
        layers = []
        if rng.random() < 0.5:  # optional occluding foreground
            d_fg = Fraction(int(rng.choice(disparities)))
            kind = ["checker", "sinusoid", "noise"][int(rng.integers(3))]
            mask = (
                f"disk:{rng.uniform(0.3, 0.7):.3f},{rng.uniform(0.3, 0.7):.3f},{rng.uniform(0.15, 0.3):.3f}"
                if rng.random() < 0.5
                else f"rect:{rng.uniform(0.05, 0.3):.3f},{rng.uniform(0.05, 0.3):.3f},{rng.uniform(0.55, 0.9):.3f},{rng.uniform(0.55, 0.9):.3f}"
            )
            layers.append(_random_layer(rng, kind, d_fg, mask))
        d_bg = Fraction(int(rng.choice(disparities)))
        kind = ["checker", "sinusoid", "noise"][int(rng.integers(3))]
        layers.append(_random_layer(rng, kind, d_bg, "full"))
        specs.append(SceneSpec(u=u, v=v, h=h, w=w, seed=scene_seed, layers=layers))
    return specs


def _random_layer(rng, kind: str, d: Fraction, mask: str) -> LayerSpec:
    return LayerSpec(
        texture=kind,
        disparity=d,
        mask=mask,
        scale=float(rng.uniform(3.0, 9.0)),
        fx=float(rng.uniform(0.05, 0.2)),
        fy=float(rng.uniform(0.05, 0.2)),
        phase=float(rng.uniform(0.0, 2.0 * math.pi)),
        smooth=float(rng.uniform(1.5, 3.5)),
        low=float(rng.uniform(0.05, 0.25)),
        high=float(rng.uniform(0.75, 0.95)),
    )


# ---------------------------------------------------------------------------
# Scene spec files: one "key value" pair per line, layers front to back


def parse_scene_file(path: str) -> SceneSpec:
    u = v = 3
    h = w = 48
    seed = 0
    layers: List[LayerSpec] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, rest = line.partition(" ")
            if key == "views":
                u, v = (int(t) for t in rest.split())
            elif key == "size":
                h, w = (int(t) for t in rest.split())
            elif key == "seed":
                seed = int(rest)
            elif key == "layer":
                kv = {}
                for tok in rest.split():
                    k, _, val = tok.partition("=")
                    kv[k] = val
                layers.append(
                    LayerSpec(
                        texture=kv.get("texture", "checker"),
                        disparity=Fraction(kv.get("disparity", "0")),
                        mask=kv.get("mask", "full"),
                        scale=float(kv.get("scale", 6.0)),
                        fx=float(kv.get("fx", 0.12)),
                        fy=float(kv.get("fy", 0.05)),
                        phase=float(kv.get("phase", 0.0)),
                        smooth=float(kv.get("smooth", 2.0)),
                        low=float(kv.get("low", 0.1)),
                        high=float(kv.get("high", 0.9)),
                    )
                )
            else:
                raise ValueError(f"{path}: unknown scene key {key!r}")
    return SceneSpec(u=u, v=v, h=h, w=w, seed=seed, layers=layers)


def scene_to_text(spec: SceneSpec) -> str:
    lines = [
        f"views {spec.u} {spec.v}",
        f"size {spec.h} {spec.w}",
        f"seed {spec.seed}",
    ]
    for lay in spec.layers:
        parts = [
            f"texture={lay.texture}",
            f"disparity={lay.disparity}",
            f"mask={lay.mask}",
            f"scale={lay.scale:g}",
            f"fx={lay.fx:g}",
            f"fy={lay.fy:g}",
            f"phase={lay.phase:g}",
            f"smooth={lay.smooth:g}",
            f"low={lay.low:g}",
            f"high={lay.high:g}",
        ]
        lines.append("layer " + " ".join(parts))
    return "\n".join(lines) + "\n"
