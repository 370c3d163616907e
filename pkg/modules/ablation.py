"""
Ablation sweeps over the network's architectural switches.

Every combination is trained with the same budget and data seed, then scored
on the same evaluation clips, so rows of a sweep are paired comparisons.
"""
import itertools
import os
from dataclasses import replace

import numpy as np
import torch

from atomic_update import atomic_write_csv
from checkpoint import restore_model
from config import parse_override
from degrade import WINDOW_SIZE, Task
from errors import ConfigError, NonFiniteError
from evaluation import EvalConfig, ModelPredictor, score_clip
from logging_config import get_logger
from model import ReconMode, build_model
from train import LossWeights, WindowDataset, focus_branch_channel, loss, train_loop

logger = get_logger(__name__)

# documented values of every sweepable switch
AXES = {
    "align_variant": ["DfConv", "Df", "DfRes"],
    "attention_variant": ["SA", "kSA", "EkSA"],
    "attention_residual": [True, False],
    "fusion": ["Add", "Concat"],
    "recon": ["Separate-7", "Single-0", "Single-7", "Single-14"],
    "recon_mode": ["Separate", "Single"],
    "recon_depth": [0, 7, 14],
    "k": [32, 50, 64],
}
GRID_AXES = ("align_variant", "attention_variant", "attention_residual", "fusion", "recon")
SMOKE_FIELD = (10, 12)


def parse_recon(value):
    """'Single-14' -> (ReconMode.SINGLE, 14)."""
    mode, _, depth = str(value).partition("-")
    try:
        return ReconMode(mode.strip().capitalize()), int(depth)
    except ValueError:
        raise ConfigError(f"Reconstruction setting '{value}' must look like Separate-7 or Single-0.")


def apply_axes(base_cfg, combination):
    """Return a copy of base_cfg with the swept values set."""
    cfg = replace(base_cfg, attention=replace(base_cfg.attention))
    for axis, value in combination.items():
        if axis == "attention_variant":
            cfg.attention = replace(cfg.attention, variant=value)
        elif axis == "attention_residual":
            cfg.attention = replace(cfg.attention, residual=bool(value))
        elif axis == "k":
            cfg.attention = replace(cfg.attention, k=value)
        elif axis == "recon":
            mode, depth = parse_recon(value)
            cfg = replace(cfg, recon_mode=mode, recon_depth=depth)
        elif axis in ("align_variant", "fusion", "recon_mode", "recon_depth"):
            cfg = replace(cfg, **{axis: value})
        else:
            raise ConfigError(f"Unknown ablation axis '{axis}'. Known: {', '.join(AXES)}.")
    return cfg.validate()


def combinations(axes):
    if not axes:
        raise ConfigError("An ablation needs at least one axis.")
    for axis, values in axes.items():
        if axis not in AXES:
            raise ConfigError(f"Unknown ablation axis '{axis}'. Known: {', '.join(AXES)}.")
        if not values:
            raise ConfigError(f"Ablation axis '{axis}' has no values.")
    names = list(axes)
    return [dict(zip(names, values)) for values in itertools.product(*(axes[n] for n in names))]


def ablation_grid(include_k=False):
    """The documented grid: 3 x 3 x 2 x 2 x 4 switch combinations (x 3 k values)."""
    axes = {axis: AXES[axis] for axis in GRID_AXES}
    if include_k:
        axes["k"] = AXES["k"]
    return combinations(axes)


def parse_axis(assignment):
    """'k=32,50,64' -> ('k', [32, 50, 64]); each value is read as a TOML literal."""
    if "=" not in assignment:
        raise ConfigError(f"Axis '{assignment}' must look like name=value1,value2.")
    name, raw = assignment.split("=", 1)
    values = [parse_override(f"axis.value={item}")[1] for item in raw.split(",") if item.strip()]
    return name.strip(), values


def smoke_step(cfg, field_size=SMOKE_FIELD, seed=0):
    """One forward and backward pass on random pictures; returns the loss."""
    model, _ = build_model(cfg)
    generator = torch.Generator().manual_seed(seed)
    h, w = field_size
    inputs = torch.rand(2, WINDOW_SIZE, 3, h, w, generator=generator)
    indicators = cfg.indicators[:2] if cfg.task is Task.DEINTERLACE else [cfg.indicators[0], cfg.indicators[-1]]
    pred = model(inputs, indicators)
    target = torch.rand(pred.shape, generator=generator)
    total, _ = loss(focus_branch_channel(pred, target, indicators, model.cfg), target)
    total.backward()
    if not torch.isfinite(total):
        raise NonFiniteError(f"Smoke step produced a non-finite loss for {cfg.to_dict()}.")
    return total.item()


def ablate(base_cfg, train_cfg, axes, clips, eval_clips=None, out_dir=None,
           loss_weights=None, eval_cfg=None):
    """
    Train and score every combination of the axes.

    Returns one row per combination: the axis values, the parameter count and
    the mean PSNR/SSIM over eval_clips (the training clips when omitted).
    """
    rows = []
    combos = combinations(axes)
    dataset = WindowDataset(clips, base_cfg.task, base_cfg.cfa_pattern)
    eval_clips = eval_clips or dataset.clips
    loss_weights = loss_weights or LossWeights()
    eval_cfg = eval_cfg or EvalConfig()

    # train_loop draws its own progress bar, so the sweep only logs
    for number, combo in enumerate(combos, start=1):
        logger.info(f"Ablation {number}/{len(combos)}: {combo}")
        cfg = apply_axes(base_cfg, combo)
        ckpt, _ = train_loop(cfg, train_cfg, dataset, loss_weights=loss_weights)
        model = restore_model(ckpt)
        predictor = ModelPredictor(model)
        psnrs, ssims = [], []
        for clip in eval_clips:
            _, clip_psnrs, clip_ssims = score_clip(clip, cfg.task, predictor, cfg.cfa_pattern, eval_cfg)
            psnrs.extend(clip_psnrs)
            ssims.extend(clip_ssims)
        row = dict(combo)
        row.update(
            params=sum(p.numel() for p in model.parameters()),
            psnr_db=float(np.mean(psnrs)),
            ssim=float(np.mean(ssims)),
        )
        rows.append(row)
        logger.info(f"{combo}: PSNR {row['psnr_db']:.2f} dB, SSIM {row['ssim']:.4f}")

    if out_dir:
        header = list(axes) + ["params", "psnr_db", "ssim"]
        atomic_write_csv(header, rows, os.path.join(out_dir, "ablation.csv"))
    return rows
