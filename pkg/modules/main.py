"""
vrl restores progressive RGB video from interlaced fields or Bayer mosaics.

A five-picture window around each frame is aligned with deformable
convolutions, complemented by a top-k attention branch over the raw pictures
and reconstructed by the branch that matches the missing field or colour
channel. This entry point degrades clips, trains and evaluates networks, runs
inference on degraded sequences, sweeps ablations and benchmarks attention.
"""

import os
import sys
from dataclasses import asdict

import click
from art import text2art
from rich.console import Console
from rich.table import Table

from ablation import ablate, ablation_grid, apply_axes, parse_axis, smoke_step
from atomic_update import atomic_write_csv
from checkpoint import load_checkpoint, restore_model, save_checkpoint
from clip_io import degrade_directory, list_clips, read_clip, read_degraded, write_frames
from config import Config
from degrade import Task, synthetic_clip
from errors import ConfigError
from evaluation import (
    EvalConfig,
    ModelPredictor,
    attention_benchmark,
    evaluate_model,
    reconstruct_sequence,
    write_profile,
)
from logging_config import configure_logging, get_logger
from model import ModelConfig
from train import LossWeights, TrainConfig, train_loop

console = Console(stderr=True)
logger = get_logger(__name__)

RESOLVED_CONFIG_NAME = "resolved_config.toml"


class VrlApp:
    """Configuration, logging and output directory of one command."""

    def __init__(self, command, config_path=None, overrides=(), out_dir=".", flags=None):
        self.logger = get_logger(__name__)
        self.command = command
        self.out_dir = out_dir
        self.flags = {k: v for k, v in (flags or {}).items() if v is not None}
        self.config = Config(config_path, list(overrides))
        for dotted, value in self.flags.items():
            if "." in dotted:
                self.config.set(dotted.split("."), value)
        os.makedirs(out_dir, exist_ok=True)
        configure_logging(self.config.get("settings", "logging_level", "WARNING"), os.path.join(out_dir, "logs"))

        self.model_cfg = ModelConfig.from_dict(self.config.section("model")).validate()
        self.train_cfg = TrainConfig.from_dict(self.config.section("train"))
        self.loss_weights = LossWeights.from_dict(self.config.section("loss"))
        self.eval_cfg = EvalConfig.from_dict(self.config.section("eval"))

    def resolved(self):
        return {
            "run": {"command": self.command, **{k: _plain(v) for k, v in self.flags.items()}},
            "settings": self.config.section("settings"),
            "paths": self.config.section("paths"),
            "model": self.model_cfg.to_dict(),
            "train": self.train_cfg.to_dict(),
            "loss": asdict(self.loss_weights),
            "eval": asdict(self.eval_cfg),
        }

    def persist(self, recap=False):
        """Write the fully resolved configuration next to the command's outputs."""
        resolved = self.resolved()
        Config.dump(resolved, os.path.join(self.out_dir, RESOLVED_CONFIG_NAME))
        self.logger.info(f"Resolved configuration written to {self.path(RESOLVED_CONFIG_NAME)}")
        if recap:
            self.config.print_config_recap(resolved)
        return resolved

    def path(self, *parts):
        return os.path.join(self.out_dir, *parts)


def _plain(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def common_options(func):
    func = click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
                        help="Directory receiving every artifact of the run.")(func)
    func = click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
                        help="Override one configuration value (repeatable).")(func)
    func = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                        help="TOML run configuration.")(func)
    return func


def load_clips(app, data_dir, synthetic):
    """Ground-truth clips from a directory of clip folders, or synthetic ones."""
    if synthetic:
        return [synthetic_clip(seed=app.model_cfg.seed + i) for i in range(synthetic)]
    data_dir = data_dir or app.config.get("paths", "train_dir", "")
    if not data_dir:
        raise ConfigError("No training data: pass --data, set paths.train_dir or use --synthetic.")
    return [read_clip(clip_dir) for clip_dir in list_clips(data_dir)]


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli():
    """Video restoration lab: deinterlacing and demosaicing."""


@cli.command()
@common_options
@click.option("--task", required=True, help="interlace or mosaic.")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--first-parity", default="odd", show_default=True)
@click.option("--pattern", default=None, help="Bayer phase (RGGB, GRBG, GBRG, BGGR).")
@click.option("--noise-sigma", default=0.0, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--workers", default=None, type=int, help="Worker processes; 1 runs serially.")
def degrade(config_path, overrides, out_dir, task, in_dir, first_parity, pattern, noise_sigma, seed, workers):
    """Write fields or mosaics (PNG + meta.json) for every clip below --in."""
    task = Task.parse(task)
    app = VrlApp("degrade", config_path, overrides, out_dir,
                 {"model.task": task.value, "model.cfa_pattern": pattern, "in": in_dir, "first_parity": first_parity,
                  "noise_sigma": noise_sigma, "seed": seed})
    app.persist()
    written = degrade_directory(in_dir, out_dir, task, first_parity, app.model_cfg.cfa_pattern,
                                noise_sigma, seed, workers)
    console.print(f"Degraded [green]{len(written)}[/green] clips into {out_dir}")


@cli.command()
@common_options
@click.option("--task", default=None, help="deinterlace or demosaic (overrides model.task).")
@click.option("--data", "data_dir", default=None, type=click.Path(exists=True, file_okay=False))
@click.option("--synthetic", default=0, type=int, help="Train on this many synthetic clips instead.")
@click.option("--iterations", default=None, type=int)
@click.option("--resume", default=None, type=click.Path(exists=True, dir_okay=False))
def train(config_path, overrides, out_dir, task, data_dir, synthetic, iterations, resume):
    """Train a network; checkpoints and log.csv go below --out."""
    console.print(text2art("vrl"))
    app = VrlApp("train", config_path, overrides, out_dir,
                 {"model.task": task, "train.iterations": iterations, "data": data_dir,
                  "synthetic": synthetic or None, "resume": resume})
    app.persist(recap=True)
    clips = load_clips(app, data_dir, synthetic)
    ckpt, _ = train_loop(app.model_cfg, app.train_cfg, clips, out_dir, app.loss_weights, resume)
    save_checkpoint(ckpt, app.path("final.zip"))
    console.print(f"Training finished at iteration [green]{ckpt.iteration}[/green]")


@cli.command()
@common_options
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Degraded sequence written by the degrade command.")
@click.option("--profile-row", default=None, type=int, help="Also write the horizontal temporal profile of this row.")
def infer(config_path, overrides, out_dir, checkpoint_path, in_dir, profile_row):
    """Reconstruct every frame of a degraded sequence."""
    ckpt = load_checkpoint(checkpoint_path)
    app = VrlApp("infer", config_path, overrides, out_dir,
                 {"checkpoint": checkpoint_path, "in": in_dir, "profile_row": profile_row})
    app.model_cfg = ckpt.config
    app.persist()
    seq = read_degraded(in_dir)
    frames = reconstruct_sequence(seq, ckpt.config.task, ModelPredictor(restore_model(ckpt)))
    write_frames(frames, app.path("frames"))
    if profile_row is not None:
        write_profile(frames, "horizontal", profile_row, app.path(f"profile_row_{profile_row}.png"))
    console.print(f"Wrote [green]{len(frames)}[/green] frames to {app.path('frames')}")


@cli.command(name="eval")
@common_options
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", default=None, type=click.Path(exists=True, file_okay=False),
              help="Ground-truth clips (defaults to paths.eval_dir).")
@click.option("--task", default=None)
@click.option("--diff-images", is_flag=True, help="Write |output - GT| amplified images.")
@click.option("--crop-border", default=None, type=int)
@click.option("--color-space", default=None, type=click.Choice(["rgb", "y"]))
def evaluate(config_path, overrides, out_dir, checkpoint_path, data_dir, task, diff_images, crop_border, color_space):
    """Score a checkpoint on ground-truth clips; writes report.csv."""
    app = VrlApp("eval", config_path, overrides, out_dir,
                 {"checkpoint": checkpoint_path, "data": data_dir, "eval.crop_border": crop_border,
                  "eval.color_space": color_space})
    data_dir = data_dir or app.config.get("paths", "eval_dir", "")
    if not data_dir:
        raise ConfigError("No evaluation data: pass --data or set paths.eval_dir.")
    ckpt = load_checkpoint(checkpoint_path)
    app.model_cfg = ckpt.config
    app.persist()
    report = evaluate_model(ckpt, data_dir, task, out_dir, diff_images, app.eval_cfg)

    table = Table(title="Evaluation")
    for column in ("clip", "frames", "PSNR (dB)", "SSIM"):
        table.add_column(column)
    for row in report.rows + [report.summary_row()]:
        table.add_row(row["clip"], str(row["frames"]), f"{row['psnr_db']:.2f}", f"{row['ssim']:.4f}")
    console.print(table)


@cli.command()
@common_options
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Clip directory of PNG frames.")
@click.option("--axis", default="horizontal", type=click.Choice(["horizontal", "vertical"]))
@click.option("--index", required=True, type=int)
def profile(config_path, overrides, out_dir, in_dir, axis, index):
    """Stack one row (horizontal) or column (vertical) of every frame."""
    app = VrlApp("profile", config_path, overrides, out_dir, {"in": in_dir, "axis": axis, "index": index})
    app.persist()
    clip = read_clip(in_dir)
    path = app.path(f"profile_{axis}_{index}.png")
    write_profile(clip, axis, index, path)
    console.print(f"Wrote {path}")


@cli.command(name="ablate")
@common_options
@click.option("--axis", "axes", multiple=True, metavar="NAME=V1,V2",
              help="Swept axis with its values (repeatable).")
@click.option("--data", "data_dir", default=None, type=click.Path(exists=True, file_okay=False))
@click.option("--synthetic", default=0, type=int)
@click.option("--smoke", is_flag=True, help="Build and step every documented combination instead of training.")
def ablate_command(config_path, overrides, out_dir, axes, data_dir, synthetic, smoke):
    """Cartesian sweep over architectural switches; writes ablation.csv."""
    app = VrlApp("ablate", config_path, overrides, out_dir,
                 {"axes": list(axes) or None, "data": data_dir, "synthetic": synthetic or None, "smoke": smoke or None})
    app.persist()
    if smoke:
        rows = []
        for combo in ablation_grid(include_k=True):
            cfg = apply_axes(app.model_cfg, combo)
            rows.append({**combo, "loss": smoke_step(cfg)})
        atomic_write_csv(list(rows[0]), rows, app.path("smoke.csv"))
        console.print(f"[green]{len(rows)}[/green] combinations built and stepped")
        return
    parsed = dict(parse_axis(assignment) for assignment in axes)
    rows = ablate(app.model_cfg, app.train_cfg, parsed, load_clips(app, data_dir, synthetic),
                  out_dir=out_dir, loss_weights=app.loss_weights, eval_cfg=app.eval_cfg)
    console.print(f"Wrote [green]{len(rows)}[/green] rows to {app.path('ablation.csv')}")


@cli.command(name="bench-attn")
@common_options
@click.option("--n", "n_values", multiple=True, type=int, default=(1024, 4096, 16384), show_default=True)
@click.option("--d", "dim", default=64, show_default=True, type=int)
@click.option("--repetitions", default=3, show_default=True, type=int)
@click.option("--k", "top_k", default=50, show_default=True, type=int)
def bench_attn(config_path, overrides, out_dir, n_values, dim, repetitions, top_k):
    """Time SA, kSA and EkSA on random tokens; writes bench_attn.csv."""
    app = VrlApp("bench-attn", config_path, overrides, out_dir,
                 {"n": list(n_values), "d": dim, "repetitions": repetitions, "k": top_k})
    app.persist()
    rows = attention_benchmark(n_values, dim, repetitions, top_k, seed=app.model_cfg.seed,
                               out_path=app.path("bench_attn.csv"))
    table = Table(title="Attention benchmark")
    for column in ("variant", "n", "seconds", "map elements", "status"):
        table.add_column(column)
    for row in rows:
        seconds = f"{row['seconds']:.4f}" if row["status"] == "ok" else "-"
        table.add_row(row["variant"], str(row["n"]), seconds, str(row["map_elements"]), row["status"])
    console.print(table)


def run(argv=None):
    """Run one command and map its outcome to an exit code (0 ok, 1 failure, 2 usage or config)."""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="vrl", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except ConfigError as e:
        click.echo(f"Configuration error: {e}", err=True)
        return 2
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        click.echo(f"Error: {type(e).__name__}: {e}", err=True)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
