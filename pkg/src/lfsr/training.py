"""Two-stage training: dense full-path pretraining, then path pruning and
fine-tuning, with Adam, a halving step schedule, and joint-axis
augmentation. Everything is driven by one seeded generator so two runs
with the same seed produce bitwise-identical checkpoints.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .data import augment, random_patch
from .metrics import psnr
from .model import (
    LFSRNet,
    STAGE_FULL,
    save_checkpoint,
)
from .resample import bicubic_resize
from .tensor import NumericError, Parameter, ShapeError, Tape, Tensor

__all__ = [
    "TrainConfig",
    "Adam",
    "l1_loss",
    "train_stage1",
    "train_stage2",
    "validation_psnr",
    "bicubic_psnr",
    "TRAIN_PRESETS",
    "TrainResult",
]


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int = 180
    steps_per_epoch: int = 64
    lr: float = 2e-4
    decay_period: int = 30  # epochs between halvings
    batch: int = 4
    patch: int = 32  # LR patch size
    scale: int = 2
    augment: bool = True
    seed: int = 0
    val_interval: int = 1  # epochs between validation passes
    max_steps: int = 0  # 0 = no cap

    def lr_at(self, epoch: int) -> float:
        return self.lr * 0.5 ** (epoch // self.decay_period)


# Paper-protocol schedules plus desk-scale fractions of them. The tiny
# presets pair with the "tiny" model preset (M=2, C=16, N=4, 3x3 views,
# 16x16 LR patches, x2) and run on a laptop CPU in minutes.
TRAIN_PRESETS = {
    "stage1": TrainConfig(stage=1, epochs=180, decay_period=30, lr=2e-4),
    "stage2": TrainConfig(stage=2, epochs=30, decay_period=15, lr=5e-5),
    "tiny-stage1": TrainConfig(
        stage=1, epochs=125, steps_per_epoch=16, decay_period=21,
        lr=2e-4, batch=2, patch=16, scale=2, val_interval=5,
    ),
    "tiny-stage2": TrainConfig(
        stage=2, epochs=30, steps_per_epoch=16, decay_period=15,
        lr=5e-5, batch=2, patch=16, scale=2, val_interval=5,
    ),
}


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    return T.mean(T.abs_(T.sub(pred, target)))


class Adam:
    """Standard bias-corrected Adam on the model's parameter list."""

    def __init__(
        self,
        params: Sequence[Parameter],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p in self.params:
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {p.name}")
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1.0 - self.beta1) * g
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1.0 - self.beta2) * (g * g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.assign(p.data - update.astype(p.data.dtype))

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": dict(self.m), "v": dict(self.v)}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for p in self.params:
            self.m[p.name] = np.asarray(state["m"][p.name], dtype=np.float32)
            self.v[p.name] = np.asarray(state["v"][p.name], dtype=np.float32)


@dataclass
class TrainResult:
    history: List[dict] = field(default_factory=list)
    final_val_psnr: float = float("nan")
    bicubic_val_psnr: float = float("nan")
    post_prune_psnr: float = float("nan")
    steps: int = 0
    diverged: bool = False
    wall_seconds: float = 0.0


def bicubic_psnr(hr_scenes: Sequence[np.ndarray], scale: int) -> float:
    """Baseline: PSNR of plain bicubic up(down(HR)) against HR, pooled."""
    vals = []
    for hr in hr_scenes:
        lr = bicubic_resize(hr.astype(np.float32), 1.0 / scale)
        up = bicubic_resize(lr, scale)
        vals.append(psnr(hr, up))
    return float(np.mean(vals))


def validation_psnr(model: LFSRNet, hr_scenes: Sequence[np.ndarray], scale: int) -> float:
    vals = []
    for hr in hr_scenes:
        lr = bicubic_resize(hr.astype(np.float32), 1.0 / scale)
        pred = model.forward(lr)
        vals.append(psnr(hr, np.clip(pred, 0.0, 1.0)))
    return float(np.mean(vals))


def _sample_batch(
    scenes: Sequence[np.ndarray],
    config: TrainConfig,
    rng: np.random.Generator,
):
    hr_size = config.patch * config.scale
    items = []
    for _ in range(config.batch):
        hr = scenes[int(rng.integers(len(scenes)))]
        patch = random_patch(hr, hr_size, rng)
        if config.augment:
            if rng.random() < 0.5:
                patch = augment(patch, "hflip")
            if rng.random() < 0.5:
                patch = augment(patch, "vflip")
            if patch.shape[0] == patch.shape[1]:
                for _ in range(int(rng.integers(4))):
                    patch = augment(patch, "rot90")
        items.append(patch)
    hr_batch = np.stack(items).astype(np.float32)
    lr_batch = bicubic_resize(hr_batch, 1.0 / config.scale)
    return lr_batch, hr_batch


def _run_training(
    model: LFSRNet,
    train_scenes: Sequence[np.ndarray],
    val_scenes: Sequence[np.ndarray],
    config: TrainConfig,
    log: Optional[Callable[[str], None]] = None,
    checkpoint_path: Optional[str] = None,
) -> TrainResult:
    if not train_scenes:
        raise ShapeError("training needs at least one scene")
    emit = log or (lambda line: None)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    opt = Adam(model.parameters())
    result = TrainResult()
    result.bicubic_val_psnr = bicubic_psnr(val_scenes, config.scale) if val_scenes else float("nan")

    def validate(epoch: int, step: int) -> float:
        if not val_scenes:
            return float("nan")
        vp = validation_psnr(model, val_scenes, config.scale)
        emit(f"step={step} epoch={epoch} val_psnr={vp:.4f} bicubic_psnr={result.bicubic_val_psnr:.4f}")
        return vp

    t_start = time.time()
    val = validate(0, 0)
    last_good = model.state_dict()
    step = 0
    stop = False
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        for _ in range(config.steps_per_epoch):
            if config.max_steps and step >= config.max_steps:
                stop = True
                break
            lr_batch, hr_batch = _sample_batch(train_scenes, config, rng)
            model.zero_grad()
            with Tape() as tape:
                pred = model.forward_t(lr_batch)
                loss = l1_loss(pred, Tensor(hr_batch))
            loss_val = float(loss.item())
            if not math.isfinite(loss_val):
                model.load_state_dict(last_good)
                if checkpoint_path:
                    save_checkpoint(checkpoint_path, model, opt.state_dict())
                result.diverged = True
                result.steps = step
                raise NumericError(
                    f"training diverged (non-finite loss) at step {step}; "
                    "last-good parameters restored"
                )
            tape.backward(loss)
            opt.step(lr)
            step += 1
            result.history.append(
                {"step": step, "epoch": epoch, "lr": lr, "loss": loss_val}
            )
            emit(f"step={step} epoch={epoch} lr={lr:.6g} loss={loss_val:.6f}")
        last_good = model.state_dict()
        if stop:
            break
        if val_scenes and (epoch + 1) % config.val_interval == 0:
            val = validate(epoch + 1, step)
    val = validate(config.epochs, step)
    result.final_val_psnr = val
    result.steps = step
    result.wall_seconds = time.time() - t_start
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, opt.state_dict())
    return result


def train_stage1(
    model: LFSRNet,
    train_scenes: Sequence[np.ndarray],
    val_scenes: Sequence[np.ndarray],
    config: TrainConfig,
    log: Optional[Callable[[str], None]] = None,
    checkpoint_path: Optional[str] = None,
) -> TrainResult:
    """Dense pretraining; requires a full-path (quad-directional) model."""
    if model.stage_tag != STAGE_FULL:
        raise ShapeError("stage-1 training requires a full-path model")
    if config.stage != 1:
        config = replace(config, stage=1)
    return _run_training(model, train_scenes, val_scenes, config, log, checkpoint_path)


def train_stage2(
    model: LFSRNet,
    train_scenes: Sequence[np.ndarray],
    val_scenes: Sequence[np.ndarray],
    config: TrainConfig,
    log: Optional[Callable[[str], None]] = None,
    checkpoint_path: Optional[str] = None,
) -> TrainResult:
    """Prune the scan paths to the per-representation presets, then fine-tune."""
    if model.stage_tag != STAGE_FULL:
        raise ShapeError("stage-2 requires a stage1-full checkpoint (already pruned?)")
    model.prune()
    post_prune = validation_psnr(model, val_scenes, config.scale) if val_scenes else float("nan")
    if log:
        log(f"post_prune_psnr={post_prune:.4f}")
    if config.stage != 2:
        config = replace(config, stage=2)
    result = _run_training(model, train_scenes, val_scenes, config, log, checkpoint_path)
    result.post_prune_psnr = post_prune
    return result
