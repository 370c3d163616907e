import os
from functools import partial
from multiprocessing import Pool

import cv2
import numpy as np
from rich.progress import Progress

from atomic_update import atomic_write_json, read_json
from degrade import (
    FieldParity,
    InterlacedSequence,
    MosaicSequence,
    ProgressiveClip,
    Task,
    interlace,
    mosaic,
    validate_pattern,
)
from errors import MissingFramesError
from logging_config import get_logger

logger = get_logger(__name__)

FRAME_NAME = "{:06d}.png"
META_NAME = "meta.json"


def frame_paths(clip_dir):
    """Zero-padded PNG frames of a clip directory in lexicographic order."""
    if not os.path.isdir(clip_dir):
        raise MissingFramesError(f"Clip directory '{clip_dir}' not found.")
    names = sorted(name for name in os.listdir(clip_dir) if name.lower().endswith(".png"))
    return [os.path.join(clip_dir, name) for name in names]


def list_clips(root):
    """Sub-directories of root that hold at least one PNG frame."""
    if not os.path.isdir(root):
        raise MissingFramesError(f"Dataset directory '{root}' not found.")
    clips = []
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        if os.path.isdir(path) and frame_paths(path):
            clips.append(path)
    return clips


def read_png(path):
    image = cv2.imread(path, cv2.IMREAD_COLOR)
    if image is None:
        raise MissingFramesError(f"Could not read image '{path}'.")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


def write_png(image, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    quantized = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(path, cv2.cvtColor(quantized, cv2.COLOR_RGB2BGR)):
        raise OSError(f"Could not write image '{path}'.")


def read_clip(clip_dir):
    paths = frame_paths(clip_dir)
    if not paths:
        raise MissingFramesError(f"No PNG frames in '{clip_dir}'.")
    return ProgressiveClip(np.stack([read_png(p) for p in paths]))


def write_frames(frames, out_dir):
    for t, frame in enumerate(frames):
        write_png(frame, os.path.join(out_dir, FRAME_NAME.format(t)))


def write_degraded(seq, out_dir, source_shape):
    """Write a degraded sequence as PNG pictures plus meta.json."""
    meta = {"source_height": int(source_shape[0]), "source_width": int(source_shape[1])}
    if isinstance(seq, InterlacedSequence):
        write_frames(seq.fields, out_dir)
        meta.update(
            task=Task.DEINTERLACE.degradation,
            first_parity=seq.parities[0].value,
            parities=[p.value for p in seq.parities],
            frames=len(seq.fields),
        )
    else:
        write_frames(seq.frames, out_dir)
        meta.update(task=Task.DEMOSAIC.degradation, pattern=seq.pattern, frames=int(seq.frames.shape[0]))
    if seq.frame_rate is not None:
        meta["frame_rate"] = seq.frame_rate
    atomic_write_json(meta, os.path.join(out_dir, META_NAME))
    return meta


def read_degraded(seq_dir):
    """Restore the InterlacedSequence or MosaicSequence stored by write_degraded."""
    meta_path = os.path.join(seq_dir, META_NAME)
    if not os.path.exists(meta_path):
        raise MissingFramesError(f"'{seq_dir}' has no {META_NAME}.")
    meta = read_json(meta_path)
    pictures = np.stack([read_png(p) for p in frame_paths(seq_dir)])
    if len(pictures) != meta["frames"]:
        raise MissingFramesError(f"'{seq_dir}' holds {len(pictures)} pictures, meta.json lists {meta['frames']}.")

    task = Task.parse(meta["task"])
    if task is Task.DEINTERLACE:
        parities = [FieldParity.parse(p) for p in meta["parities"]]
        return InterlacedSequence(list(pictures), parities, meta["source_height"], meta.get("frame_rate"))
    return MosaicSequence(pictures, meta["pattern"], meta.get("frame_rate"))


def degrade_clip(clip_dir, out_root, task, first_parity="odd", pattern="RGGB", noise_sigma=0.0, seed=0,
                 clip_index=0):
    """Degrade one clip directory; runs inside a worker process."""
    clip = read_clip(clip_dir)
    rng = np.random.default_rng([seed, clip_index])
    task = Task.parse(task)
    if task is Task.DEINTERLACE:
        seq = interlace(clip, FieldParity.parse(first_parity), noise_sigma, rng)
    else:
        seq = mosaic(clip, pattern, noise_sigma, rng)
    out_dir = os.path.join(out_root, os.path.basename(os.path.normpath(clip_dir)))
    write_degraded(seq, out_dir, (clip.height, clip.width))
    return out_dir


def _degrade_indexed(item, **kwargs):
    clip_index, clip_dir = item
    return degrade_clip(clip_dir, clip_index=clip_index, **kwargs)


def degrade_directory(in_root, out_root, task, first_parity="odd", pattern="RGGB",
                      noise_sigma=0.0, seed=0, workers=None):
    """Degrade every clip below in_root into the same layout below out_root."""
    clips = list_clips(in_root)
    if not clips:
        raise MissingFramesError(f"No clips with PNG frames below '{in_root}'.")
    if Task.parse(task) is Task.DEMOSAIC:
        pattern = validate_pattern(pattern)

    job = partial(_degrade_indexed, out_root=out_root, task=task, first_parity=first_parity,
                  pattern=pattern, noise_sigma=noise_sigma, seed=seed)
    written = []
    with Progress() as progress:
        bar = progress.add_task(f"[green]Degrading ({Task.parse(task).degradation})...", total=len(clips))
        if workers == 1:
            for item in enumerate(clips):
                written.append(job(item))
                progress.update(bar, advance=1)
        else:
            with Pool(workers) as pool:
                for out_dir in pool.imap(job, enumerate(clips)):
                    written.append(out_dir)
                    progress.update(bar, advance=1)
    logger.info(f"Degraded {len(written)} clips from {in_root} into {out_root}")
    return written
