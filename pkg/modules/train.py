import csv
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import List, Optional, Tuple

import numpy as np
import torch
from rich.progress import Progress

from atomic_update import atomic_write_json
from checkpoint import capture, load_checkpoint, restore_model, restore_optimizer, restore_rng, save_checkpoint
from degrade import (
    DEFAULT_PATTERN,
    FieldParity,
    IndicatorFlag,
    ProgressiveClip,
    Task,
    TrainingWindow,
    interlace,
    make_training_window,
    mosaic,
)
from errors import ConfigError, DimensionError, OutOfRangeError, TrainingDivergedError
from logging_config import get_logger
from model import ReconMode, build_model

logger = get_logger(__name__)

LOG_HEADER = ["iter", "loss", "mse", "char", "tv", "lr"]


@dataclass
class LossWeights:
    w_mse: float = 1.0
    w_char: float = 0.1
    lambda_tv: float = 2.0e-3
    char_eps: float = 1.0e-3

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"Loss weight {f.name} must be nonnegative.")

    @classmethod
    def from_dict(cls, values):
        return _from_dict(cls, values, "loss")


TRAIN_PRESETS = {
    "desk": {"iterations": 5000, "batch_size": 4},
    "full-deinterlace": {"iterations": 150000, "batch_size": 32},
    "full-demosaic": {"iterations": 150000, "batch_size": 24},
}


@dataclass
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 4
    patch_h: int = 64
    patch_w: int = 80
    lr0: float = 4e-4
    lr_min: float = 1e-7
    betas: Tuple[float, float] = (0.9, 0.999)
    grad_clip: float = 10.0
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 1

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1.")
        if self.batch_size < 1 or self.patch_h < 2 or self.patch_w < 2:
            raise ConfigError("batch_size and patch dimensions must be positive.")
        if self.patch_h % 2 or self.patch_w % 2:
            raise ConfigError(f"Patch dimensions must be even, got {self.patch_h}x{self.patch_w}.")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ConfigError("checkpoint_every and log_every must be positive.")

    @classmethod
    def preset(cls, name, **overrides):
        if name not in TRAIN_PRESETS:
            raise ConfigError(f"Unknown training preset '{name}'. Known: {', '.join(TRAIN_PRESETS)}.")
        return cls(**{**TRAIN_PRESETS[name], **overrides})

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        preset = values.pop("preset", None)
        if preset is not None:
            values = {**TRAIN_PRESETS.get(preset, {}), **values}
            if preset not in TRAIN_PRESETS:
                raise ConfigError(f"Unknown training preset '{preset}'.")
        return _from_dict(cls, values, "train")

    def to_dict(self):
        values = asdict(self)
        values["betas"] = list(self.betas)
        return values


def _from_dict(cls, values, section):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"Unknown {section} settings: {', '.join(sorted(unknown))}.")
    return cls(**values)


def total_variation(pred):
    """Anisotropic TV: mean |forward difference| along x plus along y."""
    tv = pred.new_zeros(())
    if pred.shape[-1] > 1:
        tv = tv + (pred[..., :, 1:] - pred[..., :, :-1]).abs().mean()
    if pred.shape[-2] > 1:
        tv = tv + (pred[..., 1:, :] - pred[..., :-1, :]).abs().mean()
    return tv


def loss(pred, gt, weights=None):
    """MSE + 0.1 Charbonnier + lambda_TV * TV(pred); returns (total, components)."""
    weights = weights or LossWeights()
    if pred.shape != gt.shape:
        raise DimensionError(f"Prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ.")
    diff = pred - gt
    mse = (diff ** 2).mean()
    char = torch.sqrt(diff ** 2 + weights.char_eps ** 2).mean()
    tv = total_variation(pred)
    total = weights.w_mse * mse + weights.w_char * char + weights.lambda_tv * tv
    return total, {"mse": mse, "char": char, "tv": tv}


def focus_branch_channel(pred, target, indicators, model_cfg):
    """
    Replace every channel a demosaic branch does not own with the target.

    At inference channel c comes from branch c only, so a ChannelR window
    trains Recon_R on the red plane alone.
    """
    if model_cfg.task is not Task.DEMOSAIC or model_cfg.recon_mode is not ReconMode.SEPARATE:
        return pred
    owned = torch.zeros(pred.shape[0], pred.shape[1], 1, 1, dtype=torch.bool, device=pred.device)
    for i, flag in enumerate(indicators):
        owned[i, IndicatorFlag.parse(flag).channel] = True
    return torch.where(owned, pred, target)


def lr_schedule(step, cfg):
    """Cosine annealing from lr0 at step 0 to lr_min at the last iteration."""
    if not 0 <= step <= cfg.iterations:
        raise OutOfRangeError(f"Step {step} outside [0, {cfg.iterations}].")
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1 + math.cos(math.pi * step / cfg.iterations))


def snap_origin(row, col, task):
    """Even row offsets keep field parity; even row and column keep the Bayer phase."""
    task = Task.parse(task)
    row -= row % 2
    if task is Task.DEMOSAIC:
        col -= col % 2
    return row, col


def sample_patch(window, cfg, rng, task, origin=None):
    """Crop the same region out of all five inputs and the target (frame coordinates)."""
    task = Task.parse(task)
    if window.target is not None:
        height, width = window.target.shape[:2]
    else:
        height = window.inputs.shape[1] * (2 if task is Task.DEINTERLACE else 1)
        width = window.inputs.shape[2]
    if height < cfg.patch_h or width < cfg.patch_w:
        raise DimensionError(f"Picture {height}x{width} is smaller than the {cfg.patch_h}x{cfg.patch_w} patch.")

    if origin is None:
        origin = (int(rng.integers(0, height - cfg.patch_h + 1)), int(rng.integers(0, width - cfg.patch_w + 1)))
    row, col = snap_origin(origin[0], origin[1], task)
    row = min(row, height - cfg.patch_h - (height - cfg.patch_h) % 2)
    col = min(col, width - cfg.patch_w)

    if task is Task.DEINTERLACE:
        inputs = window.inputs[:, row // 2:(row + cfg.patch_h) // 2, col:col + cfg.patch_w]
    else:
        inputs = window.inputs[:, row:row + cfg.patch_h, col:col + cfg.patch_w]
    target = None
    if window.target is not None:
        target = window.target[row:row + cfg.patch_h, col:col + cfg.patch_w]
    return replace(window, inputs=inputs, target=target)


@dataclass
class Batch:
    inputs: torch.Tensor
    target: torch.Tensor
    indicators: List[IndicatorFlag]
    window_ids: List[int]


def to_tensor(pictures):
    """... x H x W x 3 numpy pictures to ... x 3 x H x W float32 tensors."""
    array = np.ascontiguousarray(np.moveaxis(np.asarray(pictures, dtype=np.float32), -1, -3))
    return torch.from_numpy(array)


class WindowDataset:
    """
    All training windows of a set of clips.

    Deinterlacing interlaces each clip twice (odd and even first field), so
    every frame is a target once for each missing parity; demosaicing yields
    one window per frame and channel.
    """

    def __init__(self, clips, task, pattern=DEFAULT_PATTERN):
        self.task = Task.parse(task)
        self.clips = [c if isinstance(c, ProgressiveClip) else ProgressiveClip(c) for c in clips]
        if not self.clips:
            raise ConfigError("The training dataset is empty.")
        self.entries = []
        for clip in self.clips:
            if self.task is Task.DEINTERLACE:
                for parity in (FieldParity.ODD, FieldParity.EVEN):
                    seq = interlace(clip, parity)
                    self.entries.extend((seq, clip, n, None) for n in range(clip.num_frames))
            else:
                seq = mosaic(clip, pattern)
                for n in range(clip.num_frames):
                    self.entries.extend((seq, clip, n, c) for c in range(3))

    def __len__(self):
        return len(self.entries)

    def window(self, window_id):
        seq, clip, index, channel = self.entries[window_id]
        windows = make_training_window(seq, index, self.task, clip)
        return windows[0] if channel is None else windows[channel]

    def batch(self, iteration, cfg):
        """The batch for an iteration depends on (seed, iteration) only."""
        rng = np.random.default_rng([cfg.seed, iteration])
        window_ids = [int(i) for i in rng.integers(0, len(self), size=cfg.batch_size)]
        patches = [sample_patch(self.window(i), cfg, rng, self.task) for i in window_ids]
        return Batch(
            inputs=to_tensor(np.stack([p.inputs for p in patches])),
            target=to_tensor(np.stack([p.target for p in patches])),
            indicators=[p.indicator for p in patches],
            window_ids=window_ids,
        )


class MetricsLog:
    """CSV log with header iter,loss,mse,char,tv,lr."""

    def __init__(self, path=None, append=False):
        self.path = path
        self.rows = []
        if path is not None:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            if not (append and os.path.exists(path)):
                with open(path, "w", newline="") as f:
                    csv.writer(f).writerow(LOG_HEADER)

    def append(self, row):
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow([row[key] for key in LOG_HEADER])


def checkpoint_path(out_dir, iteration):
    return os.path.join(out_dir, "checkpoints", f"ckpt_{iteration:06d}.zip")


def train_loop(model_cfg, train_cfg, dataset, out_dir=None, loss_weights=None, resume=None):
    """
    Train the network and return (final Checkpoint, metric rows).

    resume may be a Checkpoint or a path; its model config must equal
    model_cfg and training continues after its iteration counter.
    """
    loss_weights = loss_weights or LossWeights()
    if not isinstance(dataset, WindowDataset):
        dataset = WindowDataset(dataset, model_cfg.task, model_cfg.cfa_pattern)

    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume) if isinstance(resume, str) else resume
        if ckpt.config.to_dict() != model_cfg.to_dict():
            raise ConfigError("The resume checkpoint was trained with a different model config.")
        model = restore_model(ckpt)
        start = ckpt.iteration
    else:
        model, _ = build_model(model_cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr0, betas=train_cfg.betas, weight_decay=0.0)
    if resume is not None:
        restore_optimizer(ckpt, model, optimizer)
        restore_rng(ckpt)
    if start > train_cfg.iterations:
        raise OutOfRangeError(f"Checkpoint iteration {start} is beyond {train_cfg.iterations} iterations.")

    log = MetricsLog(os.path.join(out_dir, "log.csv") if out_dir else None, append=resume is not None)
    model.train()
    logger.info(f"Training {model_cfg.task.value} from iteration {start} to {train_cfg.iterations}")

    with Progress(transient=True) as progress:
        bar = progress.add_task("[green]Training...", total=train_cfg.iterations, completed=start)
        for it in range(start, train_cfg.iterations):
            lr = lr_schedule(it, train_cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr

            batch = dataset.batch(it, train_cfg)
            pred = model(batch.inputs, batch.indicators)
            pred = focus_branch_channel(pred, batch.target, batch.indicators, model.cfg)
            total, parts = loss(pred, batch.target, loss_weights)
            if not torch.isfinite(total):
                _dump_divergence(out_dir, it, batch)
                raise TrainingDivergedError(it, batch.window_ids)

            optimizer.zero_grad(set_to_none=True)
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            optimizer.step()

            done = it + 1
            row = {"iter": done, "loss": total.item(), "lr": lr, **{k: v.item() for k, v in parts.items()}}
            if done % train_cfg.log_every == 0 or done == train_cfg.iterations:
                log.append(row)
                logger.info(f"iter {done}: loss {row['loss']:.6f} (mse {row['mse']:.6f}) lr {lr:.3e}")
            if out_dir and (done % train_cfg.checkpoint_every == 0 or done == train_cfg.iterations):
                save_checkpoint(capture(model, optimizer, done, train_cfg.seed), checkpoint_path(out_dir, done))
            progress.update(bar, advance=1)

    final = capture(model, optimizer, train_cfg.iterations, train_cfg.seed)
    return final, log.rows


def _dump_divergence(out_dir, iteration, batch):
    logger.error(f"Non-finite loss at iteration {iteration}; windows {batch.window_ids}")
    if out_dir:
        atomic_write_json(
            {
                "iteration": iteration,
                "window_ids": batch.window_ids,
                "indicators": [flag.value for flag in batch.indicators],
                "input_finite": bool(torch.isfinite(batch.inputs).all()),
            },
            os.path.join(out_dir, "nan_dump.json"),
        )
