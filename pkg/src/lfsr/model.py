"""Full super-resolution network: assembly, presets, checkpoints, pruning.

The network predicts a residual on top of bicubic upsampling of the
single-channel (luma) input light field::

    F0    = conv3x3(I_LR) + angular_embedding
    Fk    = cascade_block_k(F(k-1)),  k = 1..M
    Fagg  = dual_anchor_fusion(F1..FM)      (identity when M == 1)
    out   = bicubic(I_LR, a) + upsample(Fagg + F0)

Output projections start at zero, so a freshly built model reproduces the
bicubic baseline bit for bit.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from . import tensor as T
from .blocks import (
    AngularEmbedding,
    CascadeBlock,
    ConcatFusion,
    Conv3x3,
    DualAnchorFusion,
    EPI_MODES,
    Upsampler,
)
from .lightfield import Rep, ScanPath
from .resample import bicubic_resize
from .scan import PATH_PRESETS, QUAD_PATHS, normalize_paths
from .tensor import ShapeError, Tensor

__all__ = [
    "ModelConfig",
    "LFSRNet",
    "MODEL_PRESETS",
    "PATH_CONFIGS",
    "build_model",
    "count_params",
    "save_checkpoint",
    "load_checkpoint",
    "prune_model",
    "STAGE_FULL",
    "STAGE_PRUNED",
]

STAGE_FULL = "stage1-full"
STAGE_PRUNED = "stage2-pruned"

_CHECKPOINT_MAGIC = "LF-CHECKPOINT 1"


def _paths_to_str(paths) -> str:
    return ",".join(p.value for p in paths)


def _paths_from_str(s: str):
    return normalize_paths(ScanPath(tok) for tok in s.split(",") if tok)


# Named scan-path layouts for the pruning study: (a) the symmetric
# baseline, then successive per-representation pruning steps of two paths
# each, (c) being the production asymmetric layout.
PATH_CONFIGS: Dict[str, Dict[Rep, tuple]] = {
    "full": {r: QUAD_PATHS for r in Rep},
    "asymmetric": dict(PATH_PRESETS),
    "paths-a": {
        Rep.SAI: QUAD_PATHS,
        Rep.MACPI: QUAD_PATHS,
        Rep.HEPI: (ScanPath.ROW_FWD, ScanPath.ROW_BWD),
        Rep.VEPI: (ScanPath.COL_FWD, ScanPath.COL_BWD),
    },
    "paths-b": {
        Rep.SAI: (ScanPath.ROW_FWD, ScanPath.COL_FWD),
        Rep.MACPI: QUAD_PATHS,
        Rep.HEPI: (ScanPath.ROW_FWD, ScanPath.ROW_BWD),
        Rep.VEPI: (ScanPath.COL_FWD, ScanPath.COL_BWD),
    },
    "paths-c": dict(PATH_PRESETS),
    "paths-d": {
        Rep.SAI: (ScanPath.ROW_FWD, ScanPath.COL_FWD),
        Rep.MACPI: (ScanPath.ROW_FWD, ScanPath.COL_FWD),
        Rep.HEPI: (ScanPath.ROW_FWD,),
        Rep.VEPI: (ScanPath.COL_FWD,),
    },
}


@dataclass
class ModelConfig:
    m_blocks: int = 4
    channels: int = 64
    scale: int = 4
    u: int = 5
    v: int = 5
    n_state: int = 16
    expand: int = 1  # C_inner = expand * channels
    dt_rank: int = 0  # 0 -> max(1, C_inner // 16)
    paths: Dict[Rep, tuple] = field(default_factory=lambda: dict(PATH_PRESETS))
    fusion: str = "dual_anchor"  # or "concat"
    epi_mode: str = "panoramic"  # or "stacked" / "isolated"
    epi_order: str = "sequential"  # or "parallel"
    use_epi: bool = True

    def __post_init__(self):
        for name in ("m_blocks", "channels", "u", "v", "n_state", "expand"):
            if getattr(self, name) < 1:
                raise ShapeError(f"config: {name} must be positive")
        if self.scale not in (2, 4):
            raise ShapeError(f"config: scale must be 2 or 4, got {self.scale}")
        if self.fusion not in ("dual_anchor", "concat"):
            raise ShapeError(f"config: unknown fusion {self.fusion!r}")
        if self.epi_mode not in EPI_MODES:
            raise ShapeError(f"config: unknown epi_mode {self.epi_mode!r}")
        self.paths = {r: normalize_paths(ps) for r, ps in self.paths.items()}

    @property
    def c_inner(self) -> int:
        return self.expand * self.channels

    @property
    def rank(self) -> int:
        return self.dt_rank if self.dt_rank else max(1, self.c_inner // 16)

    def with_paths(self, layout: str) -> "ModelConfig":
        return replace(self, paths=dict(PATH_CONFIGS[layout]))

    # -- key-value serialization (config files and checkpoints) -------------

    def to_kv(self) -> Dict[str, str]:
        kv = {
            "m_blocks": str(self.m_blocks),
            "channels": str(self.channels),
            "scale": str(self.scale),
            "u": str(self.u),
            "v": str(self.v),
            "n_state": str(self.n_state),
            "expand": str(self.expand),
            "dt_rank": str(self.dt_rank),
            "fusion": self.fusion,
            "epi_mode": self.epi_mode,
            "epi_order": self.epi_order,
            "use_epi": "1" if self.use_epi else "0",
        }
        for rep in Rep:
            kv[f"paths.{rep.value}"] = _paths_to_str(self.paths[rep])
        return kv

    @classmethod
    def from_kv(cls, kv: Dict[str, str]) -> "ModelConfig":
        ints = {k: int(kv[k]) for k in (
            "m_blocks", "channels", "scale", "u", "v", "n_state", "expand", "dt_rank",
        )}
        paths = {rep: _paths_from_str(kv[f"paths.{rep.value}"]) for rep in Rep}
        return cls(
            paths=paths,
            fusion=kv["fusion"],
            epi_mode=kv["epi_mode"],
            epi_order=kv["epi_order"],
            use_epi=kv["use_epi"] == "1",
            **ints,
        )

    @classmethod
    def from_file(cls, path: str) -> "ModelConfig":
        kv = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, value = line.partition(" ")
                kv[key.strip()] = value.strip()
        base = MODEL_PRESETS["m4c64"].to_kv()
        base.update(kv)
        return cls.from_kv(base)


MODEL_PRESETS: Dict[str, ModelConfig] = {
    "m4c64": ModelConfig(m_blocks=4, channels=64),
    "m8c64": ModelConfig(m_blocks=8, channels=64),
    "m12c64": ModelConfig(m_blocks=12, channels=64),
    "m16c64": ModelConfig(m_blocks=16, channels=64),
    "m4c128": ModelConfig(m_blocks=4, channels=128),
    "m4c256": ModelConfig(m_blocks=4, channels=256),
    "tiny": ModelConfig(m_blocks=2, channels=16, scale=2, u=3, v=3, n_state=4),
}


class LFSRNet:
    """The assembled network; parameters owned by the block objects."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        c = config.channels
        self.config = config
        self.s_conv = Conv3x3(1, c, rng, "embed.conv")
        self.ang = AngularEmbedding(config.u, config.v, c, rng, "embed.ang")
        self.blocks = [
            CascadeBlock(
                c,
                config.c_inner,
                config.n_state,
                config.paths,
                rng,
                f"block.{i}",
                rank=config.rank,
                epi_mode=config.epi_mode,
                epi_order=config.epi_order,
                use_epi=config.use_epi,
            )
            for i in range(config.m_blocks)
        ]
        if config.m_blocks == 1:
            self.fusion = None  # single feature is its own aggregate
        elif config.fusion == "concat":
            self.fusion = ConcatFusion(config.m_blocks, c, rng, "fusion")
        else:
            self.fusion = DualAnchorFusion(config.m_blocks, c, rng, "fusion")
        self.upsampler = Upsampler(c, config.scale, rng, "head")
        self.stage_tag = STAGE_FULL if self._all_quad() else STAGE_PRUNED

    def _all_quad(self) -> bool:
        return all(
            stage.paths == QUAD_PATHS for blk in self.blocks for stage in blk.stages()
        )

    # -- forward -------------------------------------------------------------

    def _check_input(self, lf: np.ndarray) -> np.ndarray:
        lf = np.asarray(lf)
        if lf.ndim not in (5, 6):
            raise ShapeError(f"forward: expected (U,V,H,W,1) or batched, got {lf.shape}")
        u, v = lf.shape[-5], lf.shape[-4]
        if (u, v) != (self.config.u, self.config.v):
            raise ShapeError(
                f"forward: angular extents {(u, v)} do not match model {(self.config.u, self.config.v)}"
            )
        if lf.shape[-1] != 1:
            raise ShapeError(f"forward: single-channel input required, got C={lf.shape[-1]}")
        return lf

    def features(self, x: Tensor) -> Tensor:
        """The residual branch on features (everything except the bicubic skip)."""
        batched = x.ndim == 6
        if batched:
            b, u, v, h, w, _ = x.shape
        else:
            u, v, h, w = x.shape[0], x.shape[1], x.shape[2], x.shape[3]
            b = 1
        views = T.reshape(x, (b * u * v, h, w, 1))
        f0 = T.reshape(
            self.s_conv(views),
            (b, u, v, h, w, self.config.channels) if batched else (u, v, h, w, self.config.channels),
        )
        f0 = self.ang(f0)
        feats = []
        f = f0
        for blk in self.blocks:
            f = blk(f)
            feats.append(f)
        fagg = feats[0] if self.fusion is None else self.fusion(feats)
        return self.upsampler(T.add(fagg, f0))

    def forward_t(self, lf: np.ndarray) -> Tensor:
        """Tape-aware forward; records when a tape is active."""
        lf = self._check_input(lf)
        base = bicubic_resize(lf.astype(np.float32), self.config.scale)
        x = Tensor(lf.astype(np.float32))
        residual = self.features(x)
        return T.add(Tensor(base), residual)

    def forward(self, lf: np.ndarray) -> np.ndarray:
        return np.asarray(self.forward_t(lf).data)

    # -- parameters ------------------------------------------------------------

    def named_params(self):
        out = self.s_conv.named() + self.ang.named()
        for blk in self.blocks:
            out += blk.named()
        if self.fusion is not None:
            out += self.fusion.named()
        out += self.upsampler.named()
        names = [n for n, _ in out]
        if len(set(names)) != len(names):
            raise ShapeError("duplicate parameter names in model")
        return out

    def parameters(self):
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {n: np.asarray(p.data) for n, p in self.named_params()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        mine = dict(self.named_params())
        if set(state) != set(mine):
            missing = sorted(set(mine) - set(state))
            extra = sorted(set(state) - set(mine))
            raise ShapeError(
                f"checkpoint/model parameter mismatch (missing {missing[:4]}, extra {extra[:4]})"
            )
        for name, arr in state.items():
            if tuple(arr.shape) != tuple(mine[name].shape):
                raise ShapeError(
                    f"checkpoint/model parameter mismatch: {name} has shape "
                    f"{tuple(arr.shape)}, model expects {tuple(mine[name].shape)}"
                )
        for name, arr in state.items():
            mine[name].assign(arr)

    def prune(self, presets: Optional[Dict[Rep, tuple]] = None) -> None:
        """Restrict every stage to its per-representation path preset."""
        if self.stage_tag == STAGE_PRUNED:
            raise ShapeError("model is already pruned")
        if not self._all_quad():
            raise ShapeError("prune requires a full-path model (all stages quad-directional)")
        presets = presets or PATH_PRESETS
        for blk in self.blocks:
            blk.sai.prune(presets[Rep.SAI])
            blk.mac.prune(presets[Rep.MACPI])
            blk.hepi.prune(presets[Rep.HEPI])
            blk.vepi.prune(presets[Rep.VEPI])
        self.stage_tag = STAGE_PRUNED
        self.config = replace(self.config, paths={r: normalize_paths(p) for r, p in presets.items()})


def build_model(config: ModelConfig, seed: int = 0) -> LFSRNet:
    rng = np.random.Generator(np.random.PCG64(seed))
    return LFSRNet(config, rng)


def count_params(model: LFSRNet) -> int:
    """Exact number of learnable scalars."""
    return sum(p.size for _, p in model.named_params())


def prune_model(model: LFSRNet, presets: Optional[Dict[Rep, tuple]] = None) -> LFSRNet:
    model.prune(presets)
    return model


# ---------------------------------------------------------------------------
# Checkpoints: text header + raw little-endian float32 tensors


def save_checkpoint(
    path: str,
    model: LFSRNet,
    opt_state: Optional[dict] = None,
) -> None:
    header = io.StringIO()
    header.write(_CHECKPOINT_MAGIC + "\n")
    header.write(f"stage {model.stage_tag}\n")
    for key, value in model.config.to_kv().items():
        header.write(f"config {key} {value}\n")

    tensors: list[Tuple[str, np.ndarray]] = [
        (name, np.ascontiguousarray(p.data, dtype=np.float32))
        for name, p in model.named_params()
    ]
    if opt_state is not None:
        header.write(f"opt_step {opt_state['step']}\n")
        for group in ("m", "v"):
            for name, arr in opt_state[group].items():
                tensors.append(
                    (f"opt.{group}.{name}", np.ascontiguousarray(arr, dtype=np.float32))
                )
    for name, arr in tensors:
        dims = " ".join(str(d) for d in arr.shape)
        header.write(f"tensor {name} {arr.ndim} {dims}".rstrip() + "\n")
    header.write("payload\n")

    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("utf-8"))
        for _, arr in tensors:
            fh.write(arr.astype("<f4", copy=False).tobytes())


def load_checkpoint(path: str):
    """Returns (model, opt_state or None). Round trips are bitwise stable."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"payload\n")
    if nl < 0:
        raise ValueError(f"{path}: not a checkpoint (missing payload marker)")
    head = blob[: nl + len(b"payload\n")].decode("utf-8").splitlines()
    if not head or head[0] != _CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {head[:1]!r}")
    offset = nl + len(b"payload\n")

    stage = None
    config_kv: Dict[str, str] = {}
    opt_step = None
    specs: list[Tuple[str, tuple]] = []
    for line in head[1:-1]:
        kind, _, rest = line.partition(" ")
        if kind == "stage":
            stage = rest.strip()
        elif kind == "config":
            key, _, value = rest.partition(" ")
            config_kv[key] = value
        elif kind == "opt_step":
            opt_step = int(rest)
        elif kind == "tensor":
            parts = rest.split()
            name, ndim = parts[0], int(parts[1])
            shape = tuple(int(d) for d in parts[2 : 2 + ndim])
            specs.append((name, shape))
        else:
            raise ValueError(f"{path}: unknown checkpoint header line {line!r}")
    if stage not in (STAGE_FULL, STAGE_PRUNED):
        raise ValueError(f"{path}: bad or missing stage tag {stage!r}")

    tensors: Dict[str, np.ndarray] = {}
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        tensors[name] = arr.astype(np.float32)
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes after payload")

    config = ModelConfig.from_kv(config_kv)
    model = LFSRNet(config, np.random.Generator(np.random.PCG64(0)))
    params = {n: a for n, a in tensors.items() if not n.startswith("opt.")}
    model.load_state_dict(params)
    model.stage_tag = stage

    opt_state = None
    if opt_step is not None:
        opt_state = {"step": opt_step, "m": {}, "v": {}}
        for name, arr in tensors.items():
            if name.startswith("opt.m."):
                opt_state["m"][name[6:]] = arr
            elif name.startswith("opt.v."):
                opt_state["v"][name[6:]] = arr
    return model, opt_state
