"""Command-line interface.

Subcommands: gen, train, prune-finetune, infer, eval, flops, errmap,
selfcheck. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure. Every run echoes its effective configuration before doing work,
so any output can be reproduced from the log alone.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .data import (
    FormatError,
    export_pgm_grid,
    read_container,
    rgb_to_ycbcr,
    write_container,
    write_pgm,
    ycbcr_to_rgb,
)
from .metrics import (
    aggregate,
    error_map,
    score_scene,
    scores_to_kv,
    scores_to_tsv,
)
from .model import (
    MODEL_PRESETS,
    ModelConfig,
    build_model,
    count_params,
    load_checkpoint,
)
from .profile import count_flops
from .resample import bicubic_resize
from .synth import generate, parse_scene_file, random_scene_specs, scene_to_text
from .tensor import NumericError, ShapeError, set_fault_injection
from .training import (
    TRAIN_PRESETS,
    TrainConfig,
    train_stage1,
    train_stage2,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise _UsageError(message)


def _echo(args: argparse.Namespace, extra: Optional[Dict[str, object]] = None) -> None:
    kv = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    if extra:
        kv.update(extra)
    for key in sorted(kv):
        print(f"config {key} {kv[key]}")


def _set_threads(n: Optional[int]) -> None:
    if n:
        import numba

        numba.set_num_threads(max(1, n))


# ---------------------------------------------------------------------------
# gen


def _cmd_gen(args) -> int:
    _echo(args)
    if args.random:
        os.makedirs(args.out_dir, exist_ok=True)
        specs = random_scene_specs(
            args.random,
            seed=args.seed,
            u=args.views[0],
            v=args.views[1],
            h=args.size[0],
            w=args.size[1],
            disparities=tuple(args.disparities),
        )
        for i, spec in enumerate(specs):
            lf, disp = generate(spec)
            stem = os.path.join(args.out_dir, f"scene{i:03d}")
            write_container(stem + ".lf4d", lf, "Y")
            with open(stem + ".scene", "w", encoding="utf-8") as fh:
                fh.write(scene_to_text(spec))
            if args.with_disparity:
                write_pgm(stem + ".disp.pgm", _encode_disparity(disp))
        print(f"wrote {len(specs)} scenes to {args.out_dir}")
        return EXIT_OK
    if not args.spec or not args.out:
        raise _UsageError("gen needs --spec and --out (or --random with --out-dir)")
    spec = parse_scene_file(args.spec)
    lf, disp = generate(spec)
    write_container(args.out, lf, "Y")
    if args.disparity_out:
        write_pgm(args.disparity_out, _encode_disparity(disp))
    if args.pgm_dir:
        export_pgm_grid(args.pgm_dir, lf)
    print(f"wrote {args.out} ({spec.u}x{spec.v} views, {spec.h}x{spec.w})")
    return EXIT_OK


def _encode_disparity(disp: np.ndarray) -> np.ndarray:
    # documented fixed encoding: value = (d + 16) / 32, covering d in [-16, 16]
    return np.clip((disp + 16.0) / 32.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# train / prune-finetune


def _load_scene_dir(directory: str) -> List[np.ndarray]:
    scenes = []
    for name in sorted(os.listdir(directory)):
        if name.endswith(".lf4d"):
            lf, color = read_container(os.path.join(directory, name))
            if color == "RGB":
                lf = rgb_to_ycbcr(lf)[..., :1].astype(np.float32)
            scenes.append(lf)
    if not scenes:
        raise FormatError(f"{directory}: no .lf4d containers found")
    return scenes


def _training_data(args, model_cfg: ModelConfig):
    if args.data_dir:
        train = _load_scene_dir(args.data_dir)
    else:
        specs = random_scene_specs(
            args.synth, seed=args.seed, u=model_cfg.u, v=model_cfg.v,
            h=args.synth_size, w=args.synth_size,
        )
        train = [generate(s)[0] for s in specs]
    if args.val_dir:
        val = _load_scene_dir(args.val_dir)
    else:
        specs = random_scene_specs(
            args.val_synth, seed=args.seed + 7919, u=model_cfg.u, v=model_cfg.v,
            h=args.synth_size, w=args.synth_size,
        )
        val = [generate(s)[0] for s in specs]
    return train, val


def _train_config(args, preset_key: str) -> TrainConfig:
    tc = TRAIN_PRESETS[preset_key]
    kwargs = {}
    for name in ("epochs", "batch", "lr", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            kwargs[name] = value
    if args.max_steps is not None:
        kwargs["max_steps"] = args.max_steps
    if kwargs:
        from dataclasses import replace

        tc = replace(tc, **kwargs)
    return tc


def _open_log(path: Optional[str]):
    if not path:
        return None, lambda line: None
    fh = open(path, "w", encoding="utf-8")

    def emit(line: str) -> None:
        fh.write(line + "\n")
        fh.flush()

    return fh, emit


def _cmd_train(args) -> int:
    _set_threads(args.threads)
    model_cfg = (
        ModelConfig.from_file(args.model_config)
        if args.model_config
        else MODEL_PRESETS[args.preset]
    )
    model_cfg = model_cfg.with_paths("full")  # stage 1 trains the dense model
    tc = _train_config(args, "tiny-stage1" if args.preset == "tiny" else "stage1")
    _echo(args, {"effective_train": tc, "effective_model": model_cfg.to_kv()})
    train, val = _training_data(args, model_cfg)
    model = build_model(model_cfg, seed=tc.seed)
    fh, emit = _open_log(args.log)
    try:
        result = train_stage1(model, train, val, tc, log=emit, checkpoint_path=args.out)
    finally:
        if fh:
            fh.close()
    print(
        f"stage1 done: steps={result.steps} val_psnr={result.final_val_psnr:.4f} "
        f"bicubic={result.bicubic_val_psnr:.4f} wall={result.wall_seconds:.1f}s"
    )
    if args.curve:
        from .report import save_training_figure

        save_training_figure(result.history, args.curve)
        print(f"wrote {args.curve}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_prune_finetune(args) -> int:
    _set_threads(args.threads)
    model, _ = load_checkpoint(args.checkpoint)
    tc = _train_config(args, "tiny-stage2" if model.config.channels <= 32 else "stage2")
    _echo(args, {"effective_train": tc, "model_stage": model.stage_tag})
    train, val = _training_data(args, model.config)
    fh, emit = _open_log(args.log)
    try:
        result = train_stage2(model, train, val, tc, log=emit, checkpoint_path=args.out)
    finally:
        if fh:
            fh.close()
    print(
        f"stage2 done: steps={result.steps} post_prune={result.post_prune_psnr:.4f} "
        f"val_psnr={result.final_val_psnr:.4f} bicubic={result.bicubic_val_psnr:.4f}"
    )
    if args.curve:
        from .report import save_training_figure

        save_training_figure(result.history, args.curve)
        print(f"wrote {args.curve}")
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer / eval / errmap


def _cmd_infer(args) -> int:
    _set_threads(args.threads)
    _echo(args)
    model, _ = load_checkpoint(args.checkpoint)
    lf, color = read_container(args.input)
    scale = model.config.scale
    if color == "Y":
        pred = np.clip(model.forward(lf), 0.0, 1.0).astype(np.float32)
        write_container(args.out, pred, "Y")
    else:
        ycc = rgb_to_ycbcr(lf)
        y_sr = np.clip(model.forward(ycc[..., :1].astype(np.float32)), 0.0, 1.0)
        cb = bicubic_resize(ycc[..., 1:2].astype(np.float32), scale)
        cr = bicubic_resize(ycc[..., 2:3].astype(np.float32), scale)
        rgb = ycbcr_to_rgb(np.concatenate([y_sr, cb, cr], axis=-1))
        write_container(args.out, np.clip(rgb, 0.0, 1.0).astype(np.float32), "RGB")
    print(f"wrote {args.out} (x{scale}, {color})")
    return EXIT_OK


def _collect_pairs(pred_path: str, ref_path: str):
    """Pair up predictions and references; subdirectories name datasets."""
    if os.path.isfile(pred_path):
        return {"default": [("scene", pred_path, ref_path)]}
    datasets: Dict[str, list] = {}
    subdirs = [
        d for d in sorted(os.listdir(ref_path))
        if os.path.isdir(os.path.join(ref_path, d))
    ]
    if subdirs:
        for ds in subdirs:
            datasets[ds] = _match_dir(os.path.join(pred_path, ds), os.path.join(ref_path, ds))
    else:
        datasets["default"] = _match_dir(pred_path, ref_path)
    return datasets


def _match_dir(pred_dir: str, ref_dir: str):
    pairs = []
    for name in sorted(os.listdir(ref_dir)):
        if not name.endswith(".lf4d"):
            continue
        pred_file = os.path.join(pred_dir, name)
        if not os.path.exists(pred_file):
            raise FormatError(f"missing prediction for {name} in {pred_dir}")
        pairs.append((name[: -len(".lf4d")], pred_file, os.path.join(ref_dir, name)))
    if not pairs:
        raise FormatError(f"{ref_dir}: no .lf4d references found")
    return pairs


def _to_y(lf: np.ndarray, color: str) -> np.ndarray:
    return lf if color == "Y" else rgb_to_ycbcr(lf)[..., :1].astype(np.float32)


def _cmd_eval(args) -> int:
    _echo(args)
    datasets = _collect_pairs(args.pred, args.ref)
    scored = {}
    for ds, pairs in datasets.items():
        scored[ds] = []
        for scene_id, pred_file, ref_file in pairs:
            pred, pc = read_container(pred_file)
            ref, rc = read_container(ref_file)
            scored[ds].append(
                score_scene(_to_y(ref, rc), _to_y(pred, pc), scene_id, args.view_psnr)
            )
    overall = aggregate(scored)
    tsv = scores_to_tsv(scored)
    print(tsv, end="")
    print(f"overall psnr={overall['psnr']:.4f} ssim={overall['ssim']:.5f}")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "metrics.tsv"), "w", encoding="utf-8") as fh:
            fh.write(tsv)
        with open(os.path.join(args.out_dir, "metrics.kv"), "w", encoding="utf-8") as fh:
            fh.write(scores_to_kv(scored))
        from .report import save_metrics_figure

        save_metrics_figure(scored, os.path.join(args.out_dir, "metrics.png"))
        print(f"wrote {args.out_dir}/metrics.tsv, metrics.kv, metrics.png")
    return EXIT_OK


def _cmd_errmap(args) -> int:
    _echo(args)
    pred, pc = read_container(args.pred)
    ref, rc = read_container(args.ref)
    err = error_map(_to_y(ref, rc), _to_y(pred, pc), scale_max=args.scale_max)
    os.makedirs(args.out_dir, exist_ok=True)
    for u in range(err.shape[0]):
        for v in range(err.shape[1]):
            write_pgm(os.path.join(args.out_dir, f"err_{u}_{v}.pgm"), err[u, v])
    from .report import save_errmap_figure

    save_errmap_figure(err, os.path.join(args.out_dir, "errmap.png"))
    print(f"wrote {err.shape[0] * err.shape[1]} error maps to {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# flops


_PROFILE_PRESETS = {
    "paths-x4": [("(a) " + "symmetric", "paths-a"), ("(b) sai-pruned", "paths-b"),
                 ("(c) asymmetric", "paths-c"), ("(d) over-pruned", "paths-d")],
    "paths-x2": None,  # filled below; same layouts at scale 2
    "scaling-x4": [("m4c64", None), ("m8c64", None), ("m12c64", None),
                   ("m16c64", None), ("m4c128", None), ("m4c256", None)],
    "components-x4": [("dual-anchor", "fusion=dual_anchor"), ("concat", "fusion=concat")],
}
_PROFILE_PRESETS["paths-x2"] = _PROFILE_PRESETS["paths-x4"]


def _profile_rows(preset: str, h: int, w: int) -> List[dict]:
    rows = []
    if preset.startswith("paths"):
        scale = 2 if preset.endswith("x2") else 4
        for label, layout in _PROFILE_PRESETS["paths-x4"]:
            cfg = ModelConfig(m_blocks=4, channels=64, scale=scale).with_paths(layout)
            model = build_model(cfg, seed=0)
            rows.append(
                {"name": label, "params": count_params(model), "flops": count_flops(model, h, w)}
            )
    elif preset == "scaling-x4":
        for name, _ in _PROFILE_PRESETS[preset]:
            cfg = MODEL_PRESETS[name].with_paths("asymmetric")
            model = build_model(cfg, seed=0)
            rows.append(
                {"name": name, "params": count_params(model), "flops": count_flops(model, h, w)}
            )
    elif preset == "components-x4":
        for label, mod in _PROFILE_PRESETS[preset]:
            fusion = mod.split("=")[1]
            cfg = ModelConfig(m_blocks=4, channels=64, fusion=fusion).with_paths("asymmetric")
            model = build_model(cfg, seed=0)
            rows.append(
                {"name": label, "params": count_params(model), "flops": count_flops(model, h, w)}
            )
    else:
        raise _UsageError(f"unknown profile preset {preset!r}")
    return rows


def _decrement_report(rows: List[dict], key: str) -> str:
    vals = [r[key] for r in rows]
    deltas = [vals[i] - vals[i + 1] for i in range(len(vals) - 1)]
    if not deltas or any(d <= 0 for d in deltas):
        return f"{key}: not monotonically decreasing"
    spread = (max(deltas) - min(deltas)) / max(deltas)
    return (
        f"{key}: decrements {deltas} (spread {spread * 100:.3f}%"
        f"{', equal within 0.1%' if spread < 1e-3 else ''})"
    )


def _cmd_flops(args) -> int:
    _echo(args)
    if args.config:
        cfg = ModelConfig.from_file(args.config)
        model = build_model(cfg, seed=0)
        rows = [
            {"name": "custom", "params": count_params(model),
             "flops": count_flops(model, args.size[0], args.size[1])}
        ]
    else:
        rows = _profile_rows(args.preset, args.size[0], args.size[1])
    header = "name\tparams\tparams_M\tflops\tflops_G"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['name']}\t{r['params']}\t{r['params'] / 1e6:.4f}\t{r['flops']}\t{r['flops'] / 1e9:.4f}"
        )
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if not args.config and args.preset.startswith("paths"):
        print(_decrement_report(rows, "params"))
        print(_decrement_report(rows, "flops"))
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "profile.tsv"), "w", encoding="utf-8") as fh:
            fh.write(table)
        from .report import save_profile_figure

        save_profile_figure(rows, os.path.join(args.out_dir, "profile.png"))
        print(f"wrote {args.out_dir}/profile.tsv, profile.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# selfcheck


def _cmd_selfcheck(args) -> int:
    _set_threads(args.threads)
    _echo(args)
    if args.inject_fault:
        set_fault_injection(args.inject_fault)
    try:
        from .selfcheck import run_selfcheck

        ok = run_selfcheck(print)
    finally:
        set_fault_injection(None)
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    p = _Parser(
        prog="lfsr",
        description="Light-field super-resolution: synthetic data, training, "
        "pruning, inference, evaluation, and profiling.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"lfsr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(
            name, help=help_, formatter_class=argparse.ArgumentDefaultsHelpFormatter
        )
        sp.set_defaults(func=func)
        sp.add_argument("--threads", type=int, default=None, help="cap worker threads")
        return sp

    sp = add("gen", _cmd_gen, "render synthetic light fields with known disparity")
    sp.add_argument("--spec", help="scene spec file (key-value lines)")
    sp.add_argument("--out", help="output container path (.lf4d)")
    sp.add_argument("--random", type=int, default=0, help="generate N random scenes instead")
    sp.add_argument("--out-dir", default="scenes", help="output directory for --random")
    sp.add_argument("--views", type=int, nargs=2, default=[3, 3], metavar=("U", "V"))
    sp.add_argument("--size", type=int, nargs=2, default=[48, 48], metavar=("H", "W"))
    sp.add_argument("--disparities", type=int, nargs="+", default=[0, 1, 2])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--disparity-out", help="also write the ground-truth disparity PGM (single scene)")
    sp.add_argument("--with-disparity", action="store_true",
                    help="also write <scene>.disp.pgm files (with --random)")
    sp.add_argument("--pgm-dir", help="also export one 16-bit PGM per view")

    for name, func, help_ in (
        ("train", _cmd_train, "stage 1: train a dense full-path model"),
        ("prune-finetune", _cmd_prune_finetune, "stage 2: prune scan paths and fine-tune"),
    ):
        sp = add(name, func, help_)
        if name == "train":
            sp.add_argument("--preset", default="tiny", choices=sorted(MODEL_PRESETS))
            sp.add_argument("--model-config", help="model config file overriding --preset")
        else:
            sp.add_argument("--checkpoint", required=True, help="stage-1 checkpoint")
        sp.add_argument("--data-dir", help="directory of .lf4d training scenes")
        sp.add_argument("--synth", type=int, default=32, help="synthetic training scenes if no --data-dir")
        sp.add_argument("--val-dir", help="directory of .lf4d validation scenes")
        sp.add_argument("--val-synth", type=int, default=6, help="synthetic validation scenes")
        sp.add_argument("--synth-size", type=int, default=48, help="HR size of synthetic scenes")
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--batch", type=int, default=None)
        sp.add_argument("--lr", type=float, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--max-steps", type=int, default=None, help="hard cap on optimizer steps")
        sp.add_argument("--out", required=True, help="checkpoint output path")
        sp.add_argument("--log", help="line-oriented key-value training log")
        sp.add_argument("--curve", help="write the loss-curve figure (PNG)")

    sp = add("infer", _cmd_infer, "super-resolve a container with a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help="low-resolution .lf4d container")
    sp.add_argument("--out", required=True, help="super-resolved output container")

    sp = add("eval", _cmd_eval, "score predictions against references")
    sp.add_argument("--pred", required=True, help="prediction container or directory")
    sp.add_argument("--ref", required=True, help="reference container or directory")
    sp.add_argument("--view-psnr", default="pooled", choices=("pooled", "mean"),
                    help="scene PSNR from pooled MSE or mean of per-view PSNRs")
    sp.add_argument("--out-dir", help="write metrics.tsv, metrics.kv and metrics.png here")

    sp = add("flops", _cmd_flops, "analytic parameter/FLOP tables")
    sp.add_argument("--preset", default="paths-x4",
                    choices=sorted(_PROFILE_PRESETS))
    sp.add_argument("--config", help="profile a custom model config file instead")
    sp.add_argument("--size", type=int, nargs=2, default=[32, 32], metavar=("H", "W"))
    sp.add_argument("--out-dir", help="write profile.tsv and profile.png here")

    sp = add("errmap", _cmd_errmap, "per-view error heatmaps (PGM + PNG)")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--scale-max", type=float, default=0.1,
                    help="absolute error mapped to full scale")

    sp = add("selfcheck", _cmd_selfcheck, "run the embedded invariant suite")
    sp.add_argument("--inject-fault", choices=("matmul-grad", "scan-grad"),
                    help="enable a deliberate gradient fault (negative control)")

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, FileNotFoundError, NotADirectoryError, ShapeError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
