"""Analytic forward-pass FLOP accounting for the assembled network.

Conventions (declared, so comparisons across configurations are exact):
one multiply-accumulate = 2 FLOPs; bias adds and elementwise arithmetic
count 1 per element; transcendentals are costed per element as exp = 4,
sigmoid = 5, silu = 6, softplus = 5; layer norm = 8 per element; index
permutations (reshape, pixel shuffle, flatten) are free. Only the network
forward is counted, not the bicubic skip or metrics.

The scan cost of a stage depends only on the token count U*V*H*W, which is
identical across all four representations, so per-path cost is invariant
to where the path lives; removing one path anywhere removes the same
amount of work.
"""

from __future__ import annotations

from typing import Dict

from .model import LFSRNet

__all__ = ["flop_breakdown", "count_flops", "path_flops_per_token"]

EXP = 4
SIGMOID = 5
SILU = 6
SOFTPLUS = 5
LAYER_NORM = 8


def _conv3x3(c_in_pg: int, c_out: int, positions: int, bias: bool = True) -> int:
    flops = 2 * 9 * c_in_pg * c_out * positions
    if bias:
        flops += c_out * positions
    return flops


def _linear(d_in: int, d_out: int, tokens: int, bias: bool = True) -> int:
    flops = 2 * d_in * d_out * tokens
    if bias:
        flops += d_out * tokens
    return flops


def path_flops_per_token(c_inner: int, n_state: int, rank: int) -> int:
    """Cost of one scan direction per token: projections plus recurrence."""
    proj = 2 * c_inner * (rank + 2 * n_state) + 2 * rank * c_inner
    recurrence = c_inner * (SOFTPLUS + n_state * (EXP + 4 + 2) + 2)
    return proj + recurrence


def flop_breakdown(model: LFSRNet, h: int, w: int) -> Dict[str, int]:
    """Per-component forward FLOPs for one light field of spatial size h x w."""
    cfg = model.config
    c = cfg.channels
    ci = cfg.c_inner
    tokens = cfg.u * cfg.v * h * w

    out: Dict[str, int] = {
        "embed": _conv3x3(1, c, tokens) + c * tokens,  # conv + angular add
        "stage_fixed": 0,
        "scan": 0,
        "fusion": 0,
        "head": 0,
    }

    per_path = path_flops_per_token(ci, cfg.n_state, cfg.rank)
    stage_fixed = (
        LAYER_NORM * c * tokens
        + _linear(c, 2 * ci, tokens)
        + _conv3x3(1, ci, tokens)  # depthwise: per-group Cin is 1
        + 2 * SILU * ci * tokens  # content and gate activations
        + ci * tokens  # gate multiply
        + _linear(ci, c, tokens)
        + c * tokens  # residual add
    )
    for blk in model.blocks:
        for stage in blk.stages():
            if not blk.use_epi and stage in (blk.hepi, blk.vepi):
                continue
            out["stage_fixed"] += stage_fixed
            out["scan"] += len(stage.paths) * per_path * tokens

    m = cfg.m_blocks
    if model.fusion is None:
        pass
    elif cfg.fusion == "concat":
        out["fusion"] += _linear(m * c, c, tokens)
    else:
        out["fusion"] += 2 * 2 * (m - 1) * c * tokens  # anchor weighted sums
        out["fusion"] += _linear(2 * c, c, tokens) + SILU * c * tokens
        out["fusion"] += _linear(c, c, tokens)
    out["fusion"] += c * tokens  # F* = Fagg + F0

    a = cfg.scale
    out["head"] += _conv3x3(c, c * a * a, tokens)
    out["head"] += _conv3x3(c, 1, tokens * a * a)
    out["head"] += tokens * a * a  # residual-plus-base add
    return out


def count_flops(model: LFSRNet, h: int, w: int) -> int:
    """Total analytic forward FLOPs on an h x w input light field."""
    return sum(flop_breakdown(model, h, w).values())
