import hashlib
import os
import statistics
import time
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import List

import cv2
import numpy as np
import orjson
import torch
from rich.progress import Progress

from atomic_update import atomic_write_csv
from attention import (
    DEFAULT_K,
    MAX_KSA_TOKENS,
    AttentionVariant,
    attention_eksa,
    attention_ksa,
    attention_sa,
    record_attention_maps,
)
from checkpoint import Checkpoint, load_checkpoint, restore_model
from clip_io import FRAME_NAME, list_clips, read_clip, write_png
from degrade import FieldParity, MosaicSequence, Task, interlace, make_training_window, mosaic, validate_pattern
from errors import ConfigError, DimensionError, MissingFramesError, OutOfRangeError
from logging_config import get_logger
from model import infer_frame
from train import to_tensor

logger = get_logger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
REPORT_HEADER = ["clip", "frames", "psnr_db", "ssim"]
BENCHMARK_HEADER = ["variant", "n", "seconds", "map_elements", "status"]


@dataclass
class EvalConfig:
    peak: float = 1.0
    crop_border: int = 0
    color_space: str = "rgb"
    diff_amplification: float = 10.0

    def __post_init__(self):
        self.color_space = str(self.color_space).lower()
        if self.color_space not in ("rgb", "y"):
            raise ConfigError(f"color_space must be 'rgb' or 'y', got '{self.color_space}'.")
        if self.peak <= 0 or self.crop_border < 0:
            raise ConfigError("peak must be positive and crop_border nonnegative.")

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown eval settings: {', '.join(sorted(unknown))}.")
        return cls(**values)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"Frames differ in shape: {a.shape} vs {b.shape}.")
    return a, b


def psnr(a, b, peak=1.0):
    """PSNR in dB over all channels; identical frames give PSNR_CAP."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(10.0 * np.log10(peak ** 2 / mse))


def _ssim_channel(a, b, peak):
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    kernel = cv2.getGaussianKernel(SSIM_WINDOW, SSIM_SIGMA)
    window = np.outer(kernel, kernel.transpose())
    # only positions where the whole window fits
    m = SSIM_WINDOW // 2

    mu1 = cv2.filter2D(a, -1, window)[m:-m, m:-m]
    mu2 = cv2.filter2D(b, -1, window)[m:-m, m:-m]
    mu1_sq, mu2_sq, mu1_mu2 = mu1 ** 2, mu2 ** 2, mu1 * mu2
    sigma1_sq = cv2.filter2D(a ** 2, -1, window)[m:-m, m:-m] - mu1_sq
    sigma2_sq = cv2.filter2D(b ** 2, -1, window)[m:-m, m:-m] - mu2_sq
    sigma12 = cv2.filter2D(a * b, -1, window)[m:-m, m:-m] - mu1_mu2

    ssim_map = ((2 * mu1_mu2 + c1) * (2 * sigma12 + c2)) / ((mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2))
    return ssim_map.mean()


def ssim(a, b, peak=1.0):
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a, b = _check_pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}.")
    if a.ndim == 2:
        return float(_ssim_channel(a, b, peak))
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], peak) for c in range(a.shape[2])]))


def rgb_to_y(frame):
    """BT.601 luma of an RGB frame in [0, 1] (studio range, as used for video metrics)."""
    frame = np.asarray(frame, dtype=np.float64)
    return (16.0 + frame @ np.array([65.481, 128.553, 24.966])) / 255.0


def frame_metrics(pred, gt, cfg=None):
    cfg = cfg or EvalConfig()
    pred, gt = _check_pair(pred, gt)
    if cfg.crop_border:
        b = cfg.crop_border
        pred, gt = pred[b:-b, b:-b], gt[b:-b, b:-b]
    if cfg.color_space == "y":
        pred, gt = rgb_to_y(pred), rgb_to_y(gt)
    return psnr(pred, gt, cfg.peak), ssim(pred, gt, cfg.peak)


class ProfileAxis(Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"Unknown profile axis '{value}'.")


def temporal_profile(clip, axis, index):
    """Stack row `index` (horizontal) or column `index` (vertical) of every frame."""
    frames = clip.frames if hasattr(clip, "frames") else np.asarray(clip)
    axis = ProfileAxis.parse(axis)
    limit = frames.shape[1] if axis is ProfileAxis.HORIZONTAL else frames.shape[2]
    if not 0 <= index < limit:
        raise OutOfRangeError(f"Profile index {index} outside [0, {limit - 1}].")
    if axis is ProfileAxis.HORIZONTAL:
        return frames[:, index].copy()
    return frames[:, :, index].copy()


def write_profile(clip, axis, index, path):
    profile = temporal_profile(clip, axis, index)
    write_png(profile, path)
    return profile


def config_fingerprint(config_dict):
    return hashlib.sha256(orjson.dumps(config_dict, option=orjson.OPT_SORT_KEYS)).hexdigest()


@dataclass
class EvalReport:
    rows: List[dict] = field(default_factory=list)
    fingerprint: str = ""
    frame_psnr: List[float] = field(default_factory=list)
    frame_ssim: List[float] = field(default_factory=list)

    def add_clip(self, clip_id, psnrs, ssims):
        self.rows.append({
            "clip": clip_id,
            "frames": len(psnrs),
            "psnr_db": float(np.mean(psnrs)),
            "ssim": float(np.mean(ssims)),
        })
        self.frame_psnr.extend(psnrs)
        self.frame_ssim.extend(ssims)

    @property
    def mean_psnr(self):
        return float(np.mean(self.frame_psnr)) if self.frame_psnr else float("nan")

    @property
    def mean_ssim(self):
        return float(np.mean(self.frame_ssim)) if self.frame_ssim else float("nan")

    def summary_row(self):
        return {"clip": "ALL", "frames": len(self.frame_psnr), "psnr_db": self.mean_psnr, "ssim": self.mean_ssim}

    def write_csv(self, path):
        atomic_write_csv(REPORT_HEADER, self.rows + [self.summary_row()], path)
        return path


class ModelPredictor:
    """Reconstruct the centre frame of a window with a trained network."""

    def __init__(self, model):
        self.model = model
        self.task = model.cfg.task

    def __call__(self, window):
        inputs = to_tensor(window.inputs).unsqueeze(0)
        output = infer_frame(self.model, inputs, window.indicator)
        return output[0].permute(1, 2, 0).cpu().numpy()


def degrade_for(clip, task, pattern, first_parity=FieldParity.ODD):
    if Task.parse(task) is Task.DEINTERLACE:
        return interlace(clip, first_parity)
    return mosaic(clip, pattern)


def inference_windows(seq, task, clip=None):
    """One window per frame; demosaic windows carry no indicator so all branches run."""
    task = Task.parse(task)
    windows = []
    for index in range(len(seq)):
        window = make_training_window(seq, index, task, clip)[0]
        if task is Task.DEMOSAIC:
            window = replace(window, indicator=None)
        windows.append(window)
    return windows


def check_pattern(seq, predictor):
    """A trained network only keeps observed samples of the Bayer phase it was built for."""
    model = getattr(predictor, "model", None)
    if not isinstance(seq, MosaicSequence) or model is None:
        return
    if validate_pattern(seq.pattern) != model.cfg.cfa_pattern:
        raise ConfigError(
            f"The sequence uses the {seq.pattern} pattern but the network was trained on {model.cfg.cfa_pattern}."
        )


def reconstruct_sequence(seq, task, predictor, clip=None):
    check_pattern(seq, predictor)
    return [predictor(window) for window in inference_windows(seq, task, clip)]


def score_clip(clip, task, predictor, pattern="RGGB", eval_cfg=None):
    """Degrade, reconstruct and score one clip; returns (outputs, psnrs, ssims)."""
    eval_cfg = eval_cfg or EvalConfig()
    outputs = reconstruct_sequence(degrade_for(clip, task, pattern), task, predictor, clip)
    psnrs, ssims = [], []
    for pred, gt in zip(outputs, clip.frames):
        p, s = frame_metrics(pred, gt, eval_cfg)
        psnrs.append(p)
        ssims.append(s)
    return outputs, psnrs, ssims


def evaluate_model(checkpoint, dataset_dir, task=None, out_dir=None, diff_images=False,
                   eval_cfg=None, predictor=None, pattern=None):
    """
    Degrade every ground-truth clip under dataset_dir, reconstruct all of its
    frames (boundary frames use replicated neighbours) and score them.

    checkpoint may be a path, a Checkpoint or None when a predictor is given;
    the predictor maps a TrainingWindow to an H x W x 3 frame.
    """
    eval_cfg = eval_cfg or EvalConfig()
    config_dict = {}
    if checkpoint is not None:
        ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
        if task is not None and Task.parse(task) is not ckpt.config.task:
            raise ConfigError(
                f"Checkpoint was trained for {ckpt.config.task.value}, not {Task.parse(task).value}."
            )
        task = ckpt.config.task
        pattern = pattern or ckpt.config.cfa_pattern
        config_dict = ckpt.config.to_dict()
        predictor = predictor or ModelPredictor(restore_model(ckpt))
    if predictor is None or task is None:
        raise ConfigError("evaluate_model needs a checkpoint or both a predictor and a task.")
    task = Task.parse(task)
    pattern = pattern or "RGGB"

    clips = list_clips(dataset_dir)
    if not clips:
        raise MissingFramesError(f"No ground-truth clips below '{dataset_dir}'.")

    report = EvalReport(fingerprint=config_fingerprint({"model": config_dict, "eval": asdict(eval_cfg)}))
    with Progress(transient=True) as progress:
        bar = progress.add_task("[green]Evaluating...", total=len(clips))
        for clip_dir in clips:
            clip_id = os.path.basename(os.path.normpath(clip_dir))
            clip = read_clip(clip_dir)
            outputs, psnrs, ssims = score_clip(clip, task, predictor, pattern, eval_cfg)
            if diff_images and out_dir:
                for t, (pred, gt) in enumerate(zip(outputs, clip.frames)):
                    diff = np.abs(np.asarray(pred, dtype=np.float64) - gt) * eval_cfg.diff_amplification
                    write_png(np.clip(diff, 0.0, 1.0), os.path.join(out_dir, "diff", clip_id, FRAME_NAME.format(t)))
            report.add_clip(clip_id, psnrs, ssims)
            logger.info(f"{clip_id}: {len(psnrs)} frames, PSNR {np.mean(psnrs):.2f} dB, SSIM {np.mean(ssims):.4f}")
            progress.update(bar, advance=1)

    if out_dir:
        report.write_csv(os.path.join(out_dir, "report.csv"))
    return report


def _run_variant(variant, q, k, v, top_k):
    identity = torch.nn.Identity()
    if variant is AttentionVariant.SA:
        return attention_sa(q, k, v, identity, 1.0)
    if variant is AttentionVariant.KSA:
        return attention_ksa(q, k, v, min(top_k, q.shape[-2]), identity, 1.0)
    return attention_eksa(q, k, v, min(top_k, q.shape[-1]), identity, 1.0)


def attention_benchmark(n_values, d=64, repetitions=3, k=DEFAULT_K, seed=0, out_path=None,
                        variants=(AttentionVariant.SA, AttentionVariant.KSA, AttentionVariant.EKSA),
                        max_map_elements=MAX_KSA_TOKENS ** 2):
    """
    Median wall time and materialized map size of each attention operator on
    random n x d triples. Runs that exceed memory become skipped rows.
    """
    n_values = list(n_values)
    if not n_values:
        raise ConfigError("attention_benchmark needs at least one n.")
    if n_values != sorted(n_values):
        raise ConfigError(f"n values must be sorted ascending, got {n_values}.")
    if repetitions < 1:
        raise ConfigError("repetitions must be at least 1.")

    generator = torch.Generator().manual_seed(seed)
    rows = []
    with Progress(transient=True) as progress, torch.no_grad():
        bar = progress.add_task("[green]Benchmarking attention...", total=len(n_values) * len(variants))
        for n in n_values:
            q, key, v = (torch.randn(1, n, d, generator=generator) for _ in range(3))
            for variant in variants:
                row = {"variant": variant.value, "n": n, "seconds": "", "map_elements": "", "status": "ok"}
                if variant is not AttentionVariant.EKSA and n * n > max_map_elements:
                    row["status"] = "skipped"
                    logger.warning(f"Skipping {variant.value} at n={n}: the n x n map is too large")
                else:
                    try:
                        timings = []
                        for _ in range(repetitions):
                            with record_attention_maps() as shapes:
                                start = time.perf_counter()
                                _run_variant(variant, q, key, v, k)
                                timings.append(time.perf_counter() - start)
                        row["seconds"] = statistics.median(timings)
                        row["map_elements"] = int(np.prod(shapes[-1]))
                    except (RuntimeError, MemoryError, ConfigError) as e:
                        row["status"] = "skipped"
                        logger.warning(f"Skipping {variant.value} at n={n}: {e}")
                rows.append(row)
                progress.update(bar, advance=1)

    if out_path:
        atomic_write_csv(BENCHMARK_HEADER, rows, out_path)
    return rows


def growth_factor(rows, variant, n_from, n_to):
    """time(variant, n_to) / time(variant, n_from) from benchmark rows."""
    variant = AttentionVariant.parse(variant).value
    timings = {r["n"]: r["seconds"] for r in rows if r["variant"] == variant and r["status"] == "ok"}
    if n_from not in timings or n_to not in timings:
        raise ConfigError(f"No timing for {variant} at n={n_from} and n={n_to}.")
    return timings[n_to] / timings[n_from]
