"""
Degradation models for the two video upsampling tasks.

Interlacing keeps one field (every other scan line) per frame with the
parity alternating over time; Bayer mosaicing keeps one colour sample per
pixel and zeroes the rest. Both are fixed, noise-free by default and pure:
the same clip always yields byte-identical observations. The module also
provides the inverse weave and the assembly of the five-picture windows the
network consumes.

Row convention: the "odd" field holds 0-based rows 0, 2, 4, ... (the
1-based odd scan lines), the "even" field rows 1, 3, 5, ...
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Union

import numpy as np

from errors import ConfigError, DimensionError, OutOfRangeError

WINDOW_SIZE = 5
WINDOW_CENTER = WINDOW_SIZE // 2


class Task(Enum):
    DEINTERLACE = "deinterlace"
    DEMOSAIC = "demosaic"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"interlace": cls.DEINTERLACE, "mosaic": cls.DEMOSAIC}
        text = str(value).strip().lower()
        if text in aliases:
            return aliases[text]
        try:
            return cls(text)
        except ValueError:
            raise ConfigError(f"Unknown task '{value}'.")

    @property
    def degradation(self):
        return "interlace" if self is Task.DEINTERLACE else "mosaic"


class FieldParity(Enum):
    ODD = "odd"
    EVEN = "even"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"Unknown field parity '{value}'.")

    @property
    def row_offset(self):
        return 0 if self is FieldParity.ODD else 1

    @property
    def other(self):
        return FieldParity.EVEN if self is FieldParity.ODD else FieldParity.ODD


class IndicatorFlag(Enum):
    EVEN_FIELD = "EvenField"
    ODD_FIELD = "OddField"
    CHANNEL_R = "ChannelR"
    CHANNEL_G = "ChannelG"
    CHANNEL_B = "ChannelB"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for flag in cls:
            if str(value).strip().lower() in (flag.value.lower(), flag.name.lower()):
                return flag
        raise ConfigError(f"Unknown indicator '{value}'.")

    @classmethod
    def for_missing_field(cls, parity):
        return cls.EVEN_FIELD if parity is FieldParity.EVEN else cls.ODD_FIELD

    @classmethod
    def for_channel(cls, channel):
        return (cls.CHANNEL_R, cls.CHANNEL_G, cls.CHANNEL_B)[channel]

    @classmethod
    def members_for(cls, task):
        if task is Task.DEINTERLACE:
            return [cls.EVEN_FIELD, cls.ODD_FIELD]
        return [cls.CHANNEL_R, cls.CHANNEL_G, cls.CHANNEL_B]

    @property
    def task(self):
        if self in (IndicatorFlag.EVEN_FIELD, IndicatorFlag.ODD_FIELD):
            return Task.DEINTERLACE
        return Task.DEMOSAIC

    @property
    def missing_parity(self):
        """Parity of the field to estimate; the reference field has the other one."""
        if self is IndicatorFlag.EVEN_FIELD:
            return FieldParity.EVEN
        if self is IndicatorFlag.ODD_FIELD:
            return FieldParity.ODD
        raise ConfigError(f"{self.value} is not a field indicator.")

    @property
    def channel(self):
        channels = {IndicatorFlag.CHANNEL_R: 0, IndicatorFlag.CHANNEL_G: 1, IndicatorFlag.CHANNEL_B: 2}
        if self not in channels:
            raise ConfigError(f"{self.value} is not a channel indicator.")
        return channels[self]


# channel index sampled at each position of the 2x2 tile
CFA_PATTERNS = {
    "RGGB": ((0, 1), (1, 2)),
    "GRBG": ((1, 0), (2, 1)),
    "GBRG": ((1, 2), (0, 1)),
    "BGGR": ((2, 1), (1, 0)),
}
DEFAULT_PATTERN = "RGGB"


def validate_pattern(pattern):
    key = str(pattern).upper()
    if key not in CFA_PATTERNS:
        raise ConfigError(f"Unknown CFA pattern '{pattern}'. Known: {', '.join(CFA_PATTERNS)}.")
    return key


def cfa_mask(pattern, height, width):
    """Boolean H x W x 3 array, True where the pattern samples that channel."""
    tile = CFA_PATTERNS[validate_pattern(pattern)]
    mask = np.zeros((height, width, 3), dtype=bool)
    for dy in range(2):
        for dx in range(2):
            mask[dy::2, dx::2, tile[dy][dx]] = True
    return mask


@dataclass
class ProgressiveClip:
    frames: np.ndarray
    frame_rate: Optional[float] = None

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 3:
            frames = frames[np.newaxis]
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise DimensionError(f"Clip must be T x H x W x 3, got shape {frames.shape}.")
        if frames.shape[0] < 1:
            raise DimensionError("Clip must contain at least one frame.")
        if not np.issubdtype(frames.dtype, np.floating):
            raise DimensionError(f"Clip frames must be real-valued, got {frames.dtype}.")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
            raise ValueError("Clip intensities must lie in [0, 1].")
        self.frames = frames

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]


@dataclass
class InterlacedSequence:
    fields: List[np.ndarray]
    parities: List[FieldParity]
    source_height: int
    frame_rate: Optional[float] = None

    def __post_init__(self):
        if len(self.fields) != len(self.parities):
            raise DimensionError("Every field needs exactly one parity.")
        for earlier, later in zip(self.parities, self.parities[1:]):
            if earlier is later:
                raise ValueError("Field parities must strictly alternate.")
        for f in self.fields:
            if f.shape[0] * 2 != self.source_height:
                raise DimensionError(f"Field has {f.shape[0]} rows, expected {self.source_height // 2}.")

    def __len__(self):
        return len(self.fields)


@dataclass
class MosaicSequence:
    frames: np.ndarray
    pattern: str = DEFAULT_PATTERN
    frame_rate: Optional[float] = None

    def __len__(self):
        return self.frames.shape[0]


DegradedSequence = Union[InterlacedSequence, MosaicSequence]


@dataclass
class TrainingWindow:
    """Five pictures centred on `index`, the frame to reconstruct and its indicator."""

    inputs: np.ndarray
    target: Optional[np.ndarray]
    indicator: Optional[IndicatorFlag]
    index: int
    neighbours: List[int] = field(default_factory=list)


def _as_clip(clip):
    if isinstance(clip, ProgressiveClip):
        return clip
    if isinstance(clip, MosaicSequence):
        return ProgressiveClip(clip.frames, clip.frame_rate)
    return ProgressiveClip(np.asarray(clip))


def _add_noise(frames, noise_sigma, rng):
    if not noise_sigma:
        return frames
    rng = rng if rng is not None else np.random.default_rng(0)
    noisy = frames + rng.normal(0.0, noise_sigma, size=frames.shape).astype(frames.dtype)
    return np.clip(noisy, 0.0, 1.0)


def interlace(clip, first_parity=FieldParity.ODD, noise_sigma=0.0, rng=None):
    """Keep the field of alternating parity from each frame."""
    clip = _as_clip(clip)
    first_parity = FieldParity.parse(first_parity)
    if clip.height % 2:
        raise DimensionError(f"Interlacing needs an even frame height, got {clip.height}.")

    frames = _add_noise(clip.frames, noise_sigma, rng)
    fields, parities = [], []
    parity = first_parity
    for t in range(clip.num_frames):
        fields.append(frames[t, parity.row_offset::2].copy())
        parities.append(parity)
        parity = parity.other
    return InterlacedSequence(fields, parities, clip.height, clip.frame_rate)


def mosaic(clip, pattern=DEFAULT_PATTERN, noise_sigma=0.0, rng=None):
    """Keep one channel per pixel according to the 2x2 Bayer pattern."""
    pattern = validate_pattern(pattern)
    clip = _as_clip(clip)
    if clip.height % 2 or clip.width % 2:
        raise DimensionError(f"Mosaicing needs even frame dimensions, got {clip.height}x{clip.width}.")

    frames = _add_noise(clip.frames, noise_sigma, rng)
    mask = cfa_mask(pattern, clip.height, clip.width)
    sampled = np.where(mask[np.newaxis], frames, np.zeros((), dtype=frames.dtype))
    return MosaicSequence(sampled, pattern, clip.frame_rate)


def weave(known_field, estimated_field, known_parity):
    """Interleave a known field with the estimate of its complementary field."""
    known_parity = FieldParity.parse(known_parity)
    if known_field.shape != estimated_field.shape:
        raise DimensionError(
            f"Fields must share a shape, got {known_field.shape} and {estimated_field.shape}."
        )
    height = known_field.shape[0]
    frame = np.empty((2 * height,) + known_field.shape[1:], dtype=np.result_type(known_field, estimated_field))
    frame[known_parity.row_offset::2] = known_field
    frame[known_parity.other.row_offset::2] = estimated_field
    return frame


def window_indices(index, length):
    """Neighbour indices index-2 .. index+2, replicated at the sequence ends."""
    return [min(max(index + offset, 0), length - 1) for offset in range(-WINDOW_CENTER, WINDOW_CENTER + 1)]


def make_training_window(seq, index, task, clip=None):
    """
    Assemble the five-picture input window(s) centred on frame `index`.

    Deinterlacing returns one window whose indicator names the missing field;
    demosaicing returns one window per channel (R, G, B) over the same inputs.
    Only original observations are used, never previous reconstructions.
    """
    task = Task.parse(task)
    expected = InterlacedSequence if task is Task.DEINTERLACE else MosaicSequence
    if not isinstance(seq, expected):
        raise ConfigError(f"The {task.value} task needs an {expected.__name__}.")

    length = len(seq)
    if not 0 <= index < length:
        raise OutOfRangeError(f"Frame index {index} outside [0, {length - 1}].")
    neighbours = window_indices(index, length)
    target = None if clip is None else _as_clip(clip).frames[index]

    if task is Task.DEINTERLACE:
        inputs = np.stack([seq.fields[i] for i in neighbours])
        indicator = IndicatorFlag.for_missing_field(seq.parities[index].other)
        return [TrainingWindow(inputs, target, indicator, index, neighbours)]

    inputs = seq.frames[neighbours]
    return [
        TrainingWindow(inputs, target, IndicatorFlag.for_channel(c), index, neighbours)
        for c in range(3)
    ]


def synthetic_clip(num_frames=10, height=64, width=80, seed=0, speed=1.0):
    """Smooth coloured pattern drifting across the frame, for smoke runs without data."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    freq = rng.uniform(0.05, 0.15, size=(3, 2))
    phase = rng.uniform(0.0, 2 * np.pi, size=3)
    frames = np.empty((num_frames, height, width, 3), dtype=np.float32)
    for t in range(num_frames):
        shift = speed * t
        for c in range(3):
            wave = np.sin(freq[c, 0] * (yy + 0.5 * shift) + freq[c, 1] * (xx + shift) + phase[c])
            frames[t, :, :, c] = 0.5 + 0.4 * wave
    # 8-bit levels so written PNGs reload bit-exactly
    frames = np.round(frames * 255.0) / 255.0
    return ProgressiveClip(frames.astype(np.float32))
