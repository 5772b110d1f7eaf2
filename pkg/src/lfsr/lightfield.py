"""Exact index-level transforms between a 4-D light field and its 2-D views.

A light field is stored as an array indexed ``[u][v][y][x][c]`` (``u`` is
the horizontal angular coordinate, paired with spatial ``x``; ``v`` is
vertical, paired with ``y``). A leading batch axis is accepted everywhere.

Four working representations are supported, all pure index bijections:

* ``SAI``   - one grid per view: batch = u*V + v, grid[y][x].
* ``MACPI`` - one grid per spatial site: batch = y*W + x, grid[v][u].
* ``VEPI``  - single panorama: grid[u*H + y][x*V + v]; each contiguous
  H x V tile at tile coordinates (u, x) is the vertical epipolar slice.
* ``HEPI``  - single panorama: grid[v*W + x][y*U + u]; each contiguous
  W x U tile at tile coordinates (v, y) is the horizontal epipolar slice.

The within-panorama factor orders are configuration constants
(:data:`VEPI_ORDER`, :data:`HEPI_ORDER`) so an alternative tiling can be
adopted without touching call sites.

All functions are duck-typed over numpy arrays and autodiff tensors: they
only use ``.reshape``, ``.transpose`` and basic slicing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

__all__ = [
    "Rep",
    "ScanPath",
    "RepGrid",
    "to_rep",
    "from_rep",
    "flatten",
    "unflatten",
]


class Rep(enum.Enum):
    SAI = "sai"
    MACPI = "macpi"
    VEPI = "vepi"
    HEPI = "hepi"


class ScanPath(enum.Enum):
    """Directional flattening of a 2-D grid into a token sequence."""

    ROW_FWD = "row_fwd"  # row-major: row slow, column fast
    ROW_BWD = "row_bwd"  # exact reversal of ROW_FWD
    COL_FWD = "col_fwd"  # column-major: column slow, row fast
    COL_BWD = "col_bwd"  # exact reversal of COL_FWD


# Factor order inside the panoramic axes: (slow, fast).
VEPI_ORDER = (("u", "y"), ("x", "v"))
HEPI_ORDER = (("v", "x"), ("y", "u"))


@dataclass
class RepGrid:
    """A batch of 2-D token grids with channels, tagged with provenance."""

    data: object  # (batch, rows, cols, C) array or Tensor
    kind: Rep
    lf_shape: tuple  # (U, V, H, W) of the source field (no batch, no C)

    @property
    def shape(self):
        return self.data.shape


def _extents(x, kind_name: str):
    ndim = x.ndim if hasattr(x, "ndim") else len(x.shape)
    if ndim == 6:
        b = x.shape[0]
        u, v, h, w, c = x.shape[1:]
    elif ndim == 5:
        b = None
        u, v, h, w, c = x.shape
    else:
        raise ValueError(
            f"{kind_name}: expected (U,V,H,W,C) or (B,U,V,H,W,C), got shape {tuple(x.shape)}"
        )
    return b, u, v, h, w, c


def to_rep(lf, kind: Rep) -> RepGrid:
    """Reorganize a light field (or feature with the same extents) into a grid batch.

    The element count is conserved exactly; every mapping is a bijection on
    indices and the channel axis is carried through unchanged.
    """
    b, u, v, h, w, c = _extents(lf, f"to_rep({kind.value})")
    nb = 0 if b is None else 1
    ax = lambda *axes: tuple(range(nb)) + tuple(a + nb for a in axes)  # noqa: E731
    lead = () if b is None else (b,)

    if kind is Rep.SAI:
        grid = lf.reshape(lead + (u * v, h, w, c))
    elif kind is Rep.MACPI:
        grid = lf.transpose(ax(2, 3, 1, 0, 4)).reshape(lead + (h * w, v, u, c))
    elif kind is Rep.VEPI:
        grid = lf.transpose(ax(0, 2, 3, 1, 4)).reshape(lead + (1, u * h, w * v, c))
    elif kind is Rep.HEPI:
        grid = lf.transpose(ax(1, 3, 2, 0, 4)).reshape(lead + (1, v * w, h * u, c))
    else:
        raise ValueError(f"unknown representation {kind!r}")

    if b is not None:
        s = grid.shape
        grid = grid.reshape((b * s[1],) + tuple(s[2:]))
    return RepGrid(grid, kind, (u, v, h, w))


def from_rep(grid: RepGrid, kind: Rep, extents: tuple):
    """Invert :func:`to_rep`; bitwise identity on round trips.

    ``extents`` is (U, V, H, W) or (B, U, V, H, W).
    """
    if grid.kind is not kind:
        raise ValueError(
            f"from_rep: grid provenance {grid.kind.value} does not match {kind.value}"
        )
    if len(extents) == 5:
        b, u, v, h, w = extents
    else:
        b = None
        u, v, h, w = extents
    if (u, v, h, w) != grid.lf_shape:
        raise ValueError(
            f"from_rep: extents {(u, v, h, w)} inconsistent with grid source {grid.lf_shape}"
        )
    x = grid.data
    c = x.shape[-1]
    expected_batch = {
        Rep.SAI: u * v,
        Rep.MACPI: h * w,
        Rep.VEPI: 1,
        Rep.HEPI: 1,
    }[kind] * (1 if b is None else b)
    if x.shape[0] != expected_batch:
        raise ValueError(
            f"from_rep: grid batch {x.shape[0]} != expected {expected_batch} for {kind.value}"
        )

    lead = () if b is None else (b,)
    nb = len(lead)
    ax = lambda *axes: tuple(range(nb)) + tuple(a + nb for a in axes)  # noqa: E731

    if kind is Rep.SAI:
        return x.reshape(lead + (u, v, h, w, c))
    if kind is Rep.MACPI:
        t = x.reshape(lead + (h, w, v, u, c))
        return t.transpose(ax(3, 2, 0, 1, 4))
    if kind is Rep.VEPI:
        t = x.reshape(lead + (u, h, w, v, c))
        return t.transpose(ax(0, 3, 1, 2, 4))
    if kind is Rep.HEPI:
        t = x.reshape(lead + (v, w, h, u, c))
        return t.transpose(ax(3, 0, 2, 1, 4))
    raise ValueError(f"unknown representation {kind!r}")


def flatten(grid, path: ScanPath):
    """Serialize each grid of a batch into a token sequence along one path.

    Input (B, R, K, C) -> output (B, R*K, C). ROW_FWD is row-major,
    COL_FWD is column-major, the *_BWD paths are exact reversals.
    """
    x = grid.data if isinstance(grid, RepGrid) else grid
    b, r, k, c = x.shape
    if path in (ScanPath.COL_FWD, ScanPath.COL_BWD):
        x = x.transpose((0, 2, 1, 3))
    seq = x.reshape((b, r * k, c))
    if path in (ScanPath.ROW_BWD, ScanPath.COL_BWD):
        seq = seq[:, ::-1, :]
    return seq


def unflatten(seq, path: ScanPath, rows: int, cols: int):
    """Invert :func:`flatten`; bitwise round trip for every path."""
    b, length, c = seq.shape
    if length != rows * cols:
        raise ValueError(f"unflatten: sequence length {length} != rows*cols {rows * cols}")
    if path in (ScanPath.ROW_BWD, ScanPath.COL_BWD):
        seq = seq[:, ::-1, :]
    if path in (ScanPath.COL_FWD, ScanPath.COL_BWD):
        return seq.reshape((b, cols, rows, c)).transpose((0, 2, 1, 3))
    return seq.reshape((b, rows, cols, c))
