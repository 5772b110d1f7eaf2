"""Light-field I/O and dataset plumbing: the binary container format, PGM
view grids, color conversion, patch extraction, and joint-axis augmentation.

Container layout (all integers little-endian):

    bytes 0..3    magic "LF4D"
    u32           version (1)
    u32 x 5       U, V, H, W, C
    u32           color tag: 0 = Y, 1 = RGB
    payload       float32 LE samples in [u][v][y][x][c] order, clamped to [0, 1]
"""

from __future__ import annotations

import os
import re
import struct
from typing import List, Tuple

import numpy as np

__all__ = [
    "FormatError",
    "write_container",
    "read_container",
    "write_pgm",
    "read_pgm",
    "export_pgm_grid",
    "import_pgm_grid",
    "rgb_to_ycbcr",
    "ycbcr_to_rgb",
    "rgb_to_y",
    "extract_patches",
    "random_patch",
    "augment",
    "AUGMENT_OPS",
]

MAGIC = b"LF4D"
VERSION = 1
COLOR_TAGS = {"Y": 0, "RGB": 1}
COLOR_NAMES = {v: k for k, v in COLOR_TAGS.items()}

AUGMENT_OPS = ("hflip", "vflip", "rot90")


class FormatError(ValueError):
    """Malformed or inconsistent on-disk data."""


# ---------------------------------------------------------------------------
# Binary container


def write_container(path: str, lf: np.ndarray, color: str = "Y") -> None:
    lf = np.asarray(lf)
    if lf.ndim != 5:
        raise FormatError(f"container expects (U,V,H,W,C), got {lf.shape}")
    if color not in COLOR_TAGS:
        raise FormatError(f"unknown color tag {color!r}")
    if color == "Y" and lf.shape[4] != 1:
        raise FormatError(f"Y container must have C=1, got C={lf.shape[4]}")
    if color == "RGB" and lf.shape[4] != 3:
        raise FormatError(f"RGB container must have C=3, got C={lf.shape[4]}")
    clamped = np.clip(lf.astype(np.float32), 0.0, 1.0)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<7I", VERSION, *lf.shape, COLOR_TAGS[color]))
        fh.write(np.ascontiguousarray(clamped, dtype="<f4").tobytes())


def read_container(path: str) -> Tuple[np.ndarray, str]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, not a light-field container")
    header_size = 4 + 7 * 4
    if len(blob) < header_size:
        raise FormatError(f"{path}: truncated header")
    version, u, v, h, w, c, tag = struct.unpack_from("<7I", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    if tag not in COLOR_NAMES:
        raise FormatError(f"{path}: unknown color tag {tag}")
    count = u * v * h * w * c
    if len(blob) != header_size + count * 4:
        raise FormatError(
            f"{path}: payload size {len(blob) - header_size} != expected {count * 4} bytes"
        )
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=header_size)
    return data.reshape(u, v, h, w, c).astype(np.float32), COLOR_NAMES[tag]


# ---------------------------------------------------------------------------
# PGM grids (one 16-bit graymap per view, named <u>_<v>.pgm)


def write_pgm(path: str, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim != 2:
        raise FormatError(f"pgm expects a 2-D image, got {img.shape}")
    q = np.clip(np.rint(img.astype(np.float64) * 65535.0), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields: List[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1  # single whitespace after maxval
    if maxval == 65535:
        raw = np.frombuffer(blob, dtype=">u2", count=h * w, offset=pos)
    elif maxval == 255:
        raw = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=pos)
    else:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    return (raw.reshape(h, w).astype(np.float64) / maxval).astype(np.float32)


def export_pgm_grid(directory: str, lf: np.ndarray) -> None:
    lf = np.asarray(lf)
    if lf.ndim != 5:
        raise FormatError(f"pgm grid expects (U,V,H,W,C), got {lf.shape}")
    y = lf if lf.shape[4] == 1 else rgb_to_y(lf)
    os.makedirs(directory, exist_ok=True)
    for u in range(lf.shape[0]):
        for v in range(lf.shape[1]):
            write_pgm(os.path.join(directory, f"{u}_{v}.pgm"), y[u, v, :, :, 0])


def import_pgm_grid(directory: str) -> np.ndarray:
    pattern = re.compile(r"^(\d+)_(\d+)\.pgm$")
    views = {}
    for name in os.listdir(directory):
        m = pattern.match(name)
        if m:
            views[(int(m.group(1)), int(m.group(2)))] = read_pgm(
                os.path.join(directory, name)
            )
    if not views:
        raise FormatError(f"{directory}: no <u>_<v>.pgm views found")
    us = {k[0] for k in views}
    vs = {k[1] for k in views}
    u_max, v_max = max(us), max(vs)
    if len(views) != (u_max + 1) * (v_max + 1):
        raise FormatError(
            f"{directory}: incomplete view grid ({len(views)} files for "
            f"{(u_max + 1)}x{(v_max + 1)} views)"
        )
    h, w = views[(0, 0)].shape
    lf = np.zeros((u_max + 1, v_max + 1, h, w, 1), dtype=np.float32)
    for (u, v), img in views.items():
        if img.shape != (h, w):
            raise FormatError(f"{directory}: view {u}_{v} has mismatched size {img.shape}")
        lf[u, v, :, :, 0] = img
    return lf


# ---------------------------------------------------------------------------
# Color (ITU-R BT.601, full range)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 0.564 * (b - y) + 0.5
    cr = 0.713 * (r - y) + 0.5
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1], ycc[..., 2]
    r = y + (cr - 0.5) / 0.713
    b = y + (cb - 0.5) / 0.564
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return np.stack([r, g, b], axis=-1)


def rgb_to_y(rgb: np.ndarray) -> np.ndarray:
    return rgb_to_ycbcr(rgb)[..., :1]


# ---------------------------------------------------------------------------
# Patches and augmentation


def extract_patches(lf: np.ndarray, size: int, stride: int) -> List[np.ndarray]:
    """Crop every view at the same spatial windows; windows tile with the
    given stride and the last window clamps to the border."""
    lf = np.asarray(lf)
    h, w = lf.shape[2], lf.shape[3]
    if size > h or size > w:
        raise FormatError(f"patch size {size} exceeds spatial extents {(h, w)}")

    def starts(extent):
        s = list(range(0, extent - size + 1, stride))
        if s[-1] != extent - size:
            s.append(extent - size)
        return s

    out = []
    for y0 in starts(h):
        for x0 in starts(w):
            out.append(np.ascontiguousarray(lf[:, :, y0 : y0 + size, x0 : x0 + size, :]))
    return out


def random_patch(lf: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = lf.shape[2], lf.shape[3]
    if size > h or size > w:
        raise FormatError(f"patch size {size} exceeds spatial extents {(h, w)}")
    y0 = int(rng.integers(0, h - size + 1))
    x0 = int(rng.integers(0, w - size + 1))
    return np.ascontiguousarray(lf[:, :, y0 : y0 + size, x0 : x0 + size, :])


def augment(lf: np.ndarray, op: str) -> np.ndarray:
    """Light-field-consistent flips and rotation.

    Spatial and angular axes transform jointly: hflip reverses x and u,
    vflip reverses y and v, rot90 rotates the spatial and angular grids
    together (requires a square angular grid). These keep the epipolar
    slope structure valid; a spatial-only flip would break it.
    """
    lf = np.asarray(lf)
    if lf.ndim != 5:
        raise FormatError(f"augment expects (U,V,H,W,C), got {lf.shape}")
    if op == "hflip":
        return np.ascontiguousarray(lf[::-1, :, :, ::-1, :])
    if op == "vflip":
        return np.ascontiguousarray(lf[:, ::-1, ::-1, :, :])
    if op == "rot90":
        if lf.shape[0] != lf.shape[1]:
            raise FormatError(
                f"rot90 requires a square angular grid, got {lf.shape[0]}x{lf.shape[1]}"
            )
        # (u,v) is stored (horizontal, vertical) while (y,x) is (row, col),
        # so the jointly consistent rotation has opposite index sense
        out = np.rot90(lf, k=1, axes=(2, 3))
        out = np.rot90(out, k=-1, axes=(0, 1))
        return np.ascontiguousarray(out)
    raise FormatError(f"unknown augmentation {op!r} (use one of {AUGMENT_OPS})")
