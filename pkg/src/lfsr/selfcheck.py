"""Embedded invariant suite behind the ``selfcheck`` CLI subcommand.

Runs fast versions of the structural checks (round trips, scan oracle,
gradient check on a small model, metric closed forms, container I/O,
zero-initialization baseline, epipolar slopes) and reports one pass/fail
line per check.
"""

from __future__ import annotations

import os
import tempfile
from fractions import Fraction
from typing import Callable, List, Tuple

import numpy as np

from . import scan as S
from .data import read_container, write_container
from .lightfield import Rep, ScanPath, flatten, from_rep, to_rep, unflatten
from .metrics import aggregate, psnr, psnr_flagged, ssim, SceneScore
from .model import ModelConfig, build_model
from .resample import bicubic_resize
from .synth import LayerSpec, SceneSpec, generate
from .tensor import Tensor, grad_check
from .training import l1_loss

__all__ = ["run_selfcheck"]


def _check_round_trips() -> str:
    rng = np.random.default_rng(0)
    for _ in range(12):
        u, v = rng.integers(1, 5, 2)
        h, w = rng.integers(2, 8, 2)
        c = int(rng.integers(1, 4))
        lf = rng.random((u, v, h, w, c)).astype(np.float32)
        for kind in Rep:
            grid = to_rep(lf, kind)
            back = from_rep(grid, kind, (int(u), int(v), int(h), int(w)))
            assert np.array_equal(np.asarray(back), lf), f"{kind} round trip"
            for path in ScanPath:
                seq = flatten(grid.data, path)
                g2 = unflatten(seq, path, grid.data.shape[1], grid.data.shape[2])
                assert np.array_equal(np.asarray(g2), np.asarray(grid.data)), path
    return "representation and flatten round trips bitwise"


def _check_scan_oracle() -> str:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10):
        length = int(rng.integers(2, 128))
        c = int(rng.integers(1, 12))
        n = int(rng.integers(1, 8))
        params = S.init_direction(c, n, max(1, c // 16), rng, "sc")
        x = rng.uniform(-1.0, 1.0, (2, length, c)).astype(np.float32)
        fast = S.scan(x, params)
        ref = S.scan_reference(x, params)
        floor = max(1e-3 * float(np.abs(ref).max()), 1e-8)
        worst = max(worst, float(np.max(np.abs(fast - ref) / np.maximum(np.abs(ref), floor))))
    assert worst < 1e-5, f"scan oracle mismatch {worst:.2e}"
    return f"scan matches sequential oracle (worst rel {worst:.1e})"


def _check_gradients() -> str:
    cfg = ModelConfig(m_blocks=1, channels=4, scale=2, u=2, v=2, n_state=2).with_paths("full")
    model = build_model(cfg, seed=3)
    gen = np.random.default_rng(4)
    for _, p in model.named_params():
        p.assign(gen.uniform(-0.25, 0.25, size=p.shape).astype(np.float32))
    lf = gen.random((2, 2, 4, 4, 1)).astype(np.float32)
    target = bicubic_resize(lf.astype(np.float32), 2) + np.where(
        gen.random((2, 2, 8, 8, 1)) < 0.5, -0.1, 0.1
    ).astype(np.float32)

    def fn():
        pred = model.forward_t(lf)
        return l1_loss(pred, Tensor(target.astype(pred.data.dtype)))

    report = grad_check(fn, model.parameters(), tolerance=1e-3, max_coords=300, seed=5)
    assert report.passed, str(report)
    return f"gradients match finite differences (max rel {report.max_rel_error:.1e})"


def _check_metrics() -> str:
    a = np.zeros((8, 8))
    db = psnr(a, a + 0.1)
    assert abs(db - 20.0) < 1e-9, f"uniform offset psnr {db}"
    capped, flag = psnr_flagged(a, a)
    assert capped == 99.0 and flag
    img = np.random.default_rng(6).random((16, 16))
    assert ssim(img, img) == 1.0
    overall = aggregate(
        {
            "A": [SceneScore("s1", psnr_scene=30.0), SceneScore("s2", psnr_scene=34.0)],
            "B": [SceneScore("s3", psnr_scene=40.0)],
        }
    )
    assert overall["psnr"] == 36.0, overall
    return "metric closed forms exact (20 dB offset, ssim 1.0, two-stage mean)"


def _check_container() -> str:
    rng = np.random.default_rng(7)
    lf = rng.random((2, 3, 4, 5, 1)).astype(np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "t.lf4d")
        write_container(path, lf, "Y")
        back, color = read_container(path)
    assert color == "Y" and np.array_equal(back, np.clip(lf, 0, 1))
    return "container round trip bitwise"


def _check_zero_init() -> str:
    cfg = ModelConfig(m_blocks=1, channels=4, scale=2, u=2, v=2, n_state=2)
    model = build_model(cfg, seed=8)
    lf = np.random.default_rng(9).random((2, 2, 6, 6, 1)).astype(np.float32)
    out = model.forward(lf)
    base = bicubic_resize(lf.astype(np.float32), 2)
    assert np.array_equal(out, base), "zero-init output != bicubic"
    return "fresh model reproduces the bicubic baseline exactly"


def _check_epi_slopes() -> str:
    for d in (0, 1, 2):
        spec = SceneSpec(u=3, v=3, h=16, w=16, seed=10 + d,
                         layers=[LayerSpec("noise", Fraction(d))])
        lf, _ = generate(spec)
        u_n, v_n, h_n, w_n = 3, 3, 16, 16
        grid = np.asarray(to_rep(lf, Rep.VEPI).data)[0, :, :, 0]
        for iu in range(u_n):
            for ix in range(w_n):
                tile = grid[iu * h_n : (iu + 1) * h_n, ix * v_n : (ix + 1) * v_n]
                for iv in range(v_n - 1):
                    # tile[y][v] == tile[y + d*(v'-v)][v'] on overlapping rows
                    if d:
                        assert np.array_equal(tile[: h_n - d, iv], tile[d:, iv + 1]), d
                    else:
                        assert np.array_equal(tile[:, iv], tile[:, iv + 1])
    return "epipolar slope relation exact for d in {0,1,2}"


def run_selfcheck(emit: Callable[[str], None] = print) -> bool:
    checks: List[Tuple[str, Callable[[], str]]] = [
        ("round-trips", _check_round_trips),
        ("scan-oracle", _check_scan_oracle),
        ("grad-check", _check_gradients),
        ("metrics", _check_metrics),
        ("container", _check_container),
        ("zero-init", _check_zero_init),
        ("epi-slopes", _check_epi_slopes),
    ]
    ok = True
    for name, fn in checks:
        try:
            detail = fn()
            emit(f"PASS {name}: {detail}")
        except Exception as exc:  # noqa: BLE001 - report and continue
            ok = False
            emit(f"FAIL {name}: {exc}")
    emit("selfcheck " + ("PASSED" if ok else "FAILED"))
    return ok
