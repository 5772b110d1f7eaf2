"""Network building blocks: grid SSM stages, the representation cascade,
dual-anchor feature fusion, angular embedding, and the sub-pixel upsampler.

Every block is shape-preserving on the 5-extent feature (B?, U, V, H, W, C)
except the upsampler. Output projections initialize to zero so a fresh
network is the identity on features and its prediction collapses to the
bicubic baseline.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .lightfield import Rep, RepGrid, ScanPath, from_rep, to_rep
from .scan import init_ss2d, prune_paths, ss2d
from .tensor import Parameter, ShapeError, Tensor

__all__ = [
    "Linear",
    "Conv3x3",
    "VSSMStage",
    "CascadeBlock",
    "DualAnchorFusion",
    "AngularEmbedding",
    "Upsampler",
    "EPI_MODES",
]

EPI_MODES = ("panoramic", "stacked", "isolated")


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    k = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape).astype(np.float32)


class Linear:
    def __init__(self, d_in, d_out, rng, prefix, bias=True, zero=False):
        w = np.zeros((d_in, d_out), dtype=np.float32) if zero else _uniform(rng, d_in, (d_in, d_out))
        self.weight = Parameter(w, name=f"{prefix}.weight")
        self.bias = Parameter(np.zeros(d_out, dtype=np.float32), name=f"{prefix}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = T.add(y, self.bias)
        return y

    def named(self):
        out = [(self.weight.name, self.weight)]
        if self.bias is not None:
            out.append((self.bias.name, self.bias))
        return out


class Conv3x3:
    """3x3 same-size convolution, channels last; depthwise when groups == Cin."""

    def __init__(self, c_in, c_out, rng, prefix, groups=1, bias=True, zero=False, pad="zero"):
        c_in_pg = c_in // groups
        fan = 9 * c_in_pg
        w = (
            np.zeros((3, 3, c_in_pg, c_out), dtype=np.float32)
            if zero
            else _uniform(rng, fan, (3, 3, c_in_pg, c_out))
        )
        self.weight = Parameter(w, name=f"{prefix}.weight")
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32), name=f"{prefix}.bias") if bias else None
        self.groups = groups
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.weight, pad=self.pad, groups=self.groups)
        if self.bias is not None:
            y = T.add(y, self.bias)
        return y

    def named(self):
        out = [(self.weight.name, self.weight)]
        if self.bias is not None:
            out.append((self.bias.name, self.bias))
        return out


# ---------------------------------------------------------------------------
# Grid construction, including the epipolar layout variants


def _epi_axes(kind: Rep):
    # transpose order bringing (slice axes..., grid rows, grid cols) together
    if kind is Rep.VEPI:
        return (0, 3, 2, 1)  # (u, x) slices of (y, v) grids, from (u,v,y,x)
    return (1, 2, 3, 0)  # HEPI: (v, y) slices of (x, u) grids


def make_grid(f, kind: Rep, mode: str = "panoramic"):
    """Build the scan grid for one representation.

    Returns (RepGrid, restore) where restore maps grid data back to the
    feature layout. For SAI/MacPI and the panoramic epipolar layout this is
    the canonical bijection pair; the "isolated" variant gives every
    epipolar slice its own grid and "stacked" concatenates the slices of
    one orientation into a single tall grid, so recurrent state flows
    across slice boundaries without the panoramic 2-D adjacency.
    """
    if kind in (Rep.SAI, Rep.MACPI) or mode == "panoramic":
        grid = to_rep(f, kind)
        extents = f.shape[:-1] if len(f.shape) == 5 else (f.shape[0],) + tuple(f.shape[1:-1])
        restore = lambda data: from_rep(  # noqa: E731
            RepGrid(data, kind, grid.lf_shape), kind, extents
        )
        return grid, restore
    if mode not in EPI_MODES:
        raise ShapeError(f"unknown epipolar layout {mode!r}")

    batched = len(f.shape) == 6
    b = f.shape[0] if batched else 1
    u, v, h, w, c = f.shape[-5:]
    a0, a1, a2, a3 = _epi_axes(kind)
    off = 1 if batched else 0
    axes = (tuple(range(off)) + tuple(a + off for a in (a0, a1, a2, a3)) + (4 + off,))
    t = f.transpose(axes)  # (B?, s0, s1, rows, cols, C)
    s0, s1, rows, cols = t.shape[off], t.shape[off + 1], t.shape[off + 2], t.shape[off + 3]
    if mode == "isolated":
        grid_data = t.reshape((b * s0 * s1, rows, cols, c))
    else:  # stacked
        grid_data = t.reshape((b, s0 * s1 * rows, cols, c))
    inv = tuple(int(i) for i in np.argsort(axes))

    def restore(data):
        back = data.reshape((b,) + (s0, s1, rows, cols, c) if batched else (s0, s1, rows, cols, c))
        return back.transpose(inv)

    return RepGrid(grid_data, kind, (u, v, h, w)), restore


# ---------------------------------------------------------------------------
# Stages


class VSSMStage:
    """One representation-bound processor: norm, project, depthwise conv,
    multi-path selective scan, gate, project back, residual add."""

    def __init__(
        self,
        kind: Rep,
        channels: int,
        c_inner: int,
        n_state: int,
        paths: Sequence[ScanPath],
        rng: np.random.Generator,
        prefix: str,
        rank: Optional[int] = None,
        epi_mode: str = "panoramic",
    ):
        self.kind = kind
        self.channels = channels
        self.c_inner = c_inner
        self.epi_mode = epi_mode
        self.prefix = prefix
        self.norm_gamma = Parameter(np.ones(channels, dtype=np.float32), name=f"{prefix}.norm.gamma")
        self.norm_beta = Parameter(np.zeros(channels, dtype=np.float32), name=f"{prefix}.norm.beta")
        self.in_proj = Linear(channels, 2 * c_inner, rng, f"{prefix}.in_proj")
        self.dwconv = Conv3x3(c_inner, c_inner, rng, f"{prefix}.dwconv", groups=c_inner)
        self.core = init_ss2d(c_inner, n_state, paths, rng, prefix, rank=rank)
        self.out_proj = Linear(c_inner, channels, rng, f"{prefix}.out_proj", zero=True)

    @property
    def paths(self):
        return self.core.paths

    def __call__(self, f: Tensor) -> Tensor:
        grid, restore = make_grid(f, self.kind, self.epi_mode)
        z = T.layer_norm(grid.data, self.norm_gamma, self.norm_beta)
        p = self.in_proj(z)
        content = p[..., : self.c_inner]
        gate = p[..., self.c_inner :]
        content = T.silu(self.dwconv(content))
        inner = RepGrid(content, grid.kind, grid.lf_shape)
        y = ss2d(inner, self.core.paths, self.core).data
        y = T.mul(y, T.silu(gate))
        out = self.out_proj(y)
        return T.add(f, restore(out))

    def prune(self, keep: Sequence[ScanPath]) -> None:
        self.core = prune_paths(self.core, keep)

    def named(self):
        out = [
            (self.norm_gamma.name, self.norm_gamma),
            (self.norm_beta.name, self.norm_beta),
        ]
        out += self.in_proj.named() + self.dwconv.named()
        out += [(f"{self.prefix}.{n}", p) for n, p in self.core.named()]
        out += self.out_proj.named()
        return out


class CascadeBlock:
    """Refinement cascade over representations: view grids, then macro-pixel
    grids, then the two epipolar panoramas (horizontal first)."""

    def __init__(
        self,
        channels: int,
        c_inner: int,
        n_state: int,
        paths_by_rep: dict,
        rng: np.random.Generator,
        prefix: str,
        rank: Optional[int] = None,
        epi_mode: str = "panoramic",
        epi_order: str = "sequential",
        use_epi: bool = True,
    ):
        if epi_order not in ("sequential", "parallel"):
            raise ShapeError(f"unknown epi_order {epi_order!r}")
        mk = lambda kind, name: VSSMStage(  # noqa: E731
            kind, channels, c_inner, n_state, paths_by_rep[kind], rng,
            f"{prefix}.{name}", rank=rank, epi_mode=epi_mode,
        )
        self.sai = mk(Rep.SAI, "sai")
        self.mac = mk(Rep.MACPI, "mac")
        self.hepi = mk(Rep.HEPI, "hepi")
        self.vepi = mk(Rep.VEPI, "vepi")
        self.epi_order = epi_order
        self.use_epi = use_epi

    def stages(self):
        return [self.sai, self.mac, self.hepi, self.vepi]

    def __call__(self, f: Tensor) -> Tensor:
        f = self.sai(f)
        f = self.mac(f)
        if not self.use_epi:
            return f
        if self.epi_order == "sequential":
            f = self.hepi(f)
            f = self.vepi(f)
            return f
        # parallel: both branch deltas applied to the same input and summed
        dh = T.sub(self.hepi(f), f)
        dv = T.sub(self.vepi(f), f)
        return T.add(f, T.add(dh, dv))

    def named(self):
        out = []
        for stage in self.stages():
            out += stage.named()
        return out


class DualAnchorFusion:
    """Weighted fusion of the cascade features around two anchors.

    The first feature anchors spatial texture, the last anchors geometry;
    intermediate features are injected into both sums through learnable
    per-layer scalars, then the two anchors are concatenated along channels
    and mixed by a two-layer MLP back to C channels.
    """

    def __init__(self, depth: int, channels: int, rng: np.random.Generator, prefix: str):
        if depth < 2:
            raise ShapeError(f"dual-anchor fusion needs at least 2 features, got {depth}")
        self.depth = depth
        ws = np.zeros(depth - 1, dtype=np.float32)
        ws[0] = 1.0  # spatial anchor weight (layer 1)
        wg = np.zeros(depth - 1, dtype=np.float32)
        wg[-1] = 1.0  # geometric anchor weight (layer M)
        self.w_spatial = Parameter(ws, name=f"{prefix}.w_spatial")  # layers 1..M-1
        self.w_geometric = Parameter(wg, name=f"{prefix}.w_geometric")  # layers 2..M
        self.fuse1 = Linear(2 * channels, channels, rng, f"{prefix}.fuse1")
        self.fuse2 = Linear(channels, channels, rng, f"{prefix}.fuse2")

    def anchors(self, features: Sequence[Tensor]):
        m = len(features)
        if m != self.depth:
            raise ShapeError(f"expected {self.depth} cascade features, got {m}")
        f_s = T.mul(features[0], self.w_spatial[0])
        f_g = T.mul(features[-1], self.w_geometric[m - 2])
        for k in range(2, m):  # intermediate layers k = 2..M-1
            f_s = T.add(f_s, T.mul(features[k - 1], self.w_spatial[k - 1]))
            f_g = T.add(f_g, T.mul(features[k - 1], self.w_geometric[k - 2]))
        return f_s, f_g

    def __call__(self, features: Sequence[Tensor]) -> Tensor:
        f_s, f_g = self.anchors(features)
        cat = T.concat((f_s, f_g), axis=-1)
        return self.fuse2(T.silu(self.fuse1(cat)))

    def named(self):
        return [
            (self.w_spatial.name, self.w_spatial),
            (self.w_geometric.name, self.w_geometric),
        ] + self.fuse1.named() + self.fuse2.named()


class ConcatFusion:
    """Ablation substitute for the dual-anchor module: concatenate every
    cascade feature and project back with a single linear layer."""

    def __init__(self, depth: int, channels: int, rng: np.random.Generator, prefix: str):
        self.depth = depth
        self.proj = Linear(depth * channels, channels, rng, f"{prefix}.proj")

    def __call__(self, features: Sequence[Tensor]) -> Tensor:
        if len(features) != self.depth:
            raise ShapeError(f"expected {self.depth} cascade features, got {len(features)}")
        return self.proj(T.concat(tuple(features), axis=-1))

    def named(self):
        return self.proj.named()


class AngularEmbedding:
    """Learnable per-view offset (U, V, C), broadcast over spatial positions."""

    def __init__(self, u: int, v: int, channels: int, rng: np.random.Generator, prefix: str):
        k = 1.0 / math.sqrt(channels)
        self.table = Parameter(
            rng.uniform(-k, k, size=(u, v, channels)).astype(np.float32),
            name=f"{prefix}.table",
        )

    def __call__(self, f: Tensor) -> Tensor:
        # bring the angular extents last-but-channel so the (U,V,C) table is a
        # trailing suffix, add, and permute back
        if f.ndim == 5:
            fwd, back = (2, 3, 0, 1, 4), (2, 3, 0, 1, 4)
        elif f.ndim == 6:
            fwd, back = (0, 3, 4, 1, 2, 5), (0, 3, 4, 1, 2, 5)
        else:
            raise ShapeError(f"angular embedding: bad feature rank {f.ndim}")
        t = T.permute(f, fwd)
        t = T.add(t, self.table)
        return T.permute(t, back)

    def named(self):
        return [(self.table.name, self.table)]


class Upsampler:
    """Per-view sub-pixel upsampling head: 3x3 conv to C*a^2 channels, pixel
    shuffle by a, 3x3 conv down to one output channel (zero-initialized)."""

    def __init__(self, channels: int, factor: int, rng: np.random.Generator, prefix: str):
        if factor not in (2, 4):
            raise ShapeError(f"unsupported upsampling factor {factor}")
        self.factor = factor
        self.channels = channels
        self.expand = Conv3x3(channels, channels * factor * factor, rng, f"{prefix}.expand")
        self.to_image = Conv3x3(channels, 1, rng, f"{prefix}.to_image", zero=True)

    def __call__(self, f: Tensor) -> Tensor:
        a = self.factor
        batched = f.ndim == 6
        if batched:
            b, u, v, h, w, c = f.shape
        else:
            u, v, h, w, c = f.shape
            b = 1
        views = T.reshape(f, (b * u * v, h, w, c))
        x = self.expand(views)
        x = T.permute(x, (0, 3, 1, 2))
        x = T.pixel_shuffle(x, a)
        x = T.permute(x, (0, 2, 3, 1))
        x = self.to_image(x)
        shape = (b, u, v, a * h, a * w, 1) if batched else (u, v, a * h, a * w, 1)
        return T.reshape(x, shape)

    def named(self):
        return self.expand.named() + self.to_image.named()
