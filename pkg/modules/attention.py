"""
Global-feature branch: softmax, top-k selection and three attention operators.

SA and kSA build the n x n token map Q K^T; EkSA multiplies V^T K first so the
only map it materializes is d x d, independent of the number of tokens.
"""
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from degrade import WINDOW_SIZE
from errors import ConfigError, DimensionError, NonFiniteError

MAX_KSA_TOKENS = 2 ** 16
DEFAULT_K = 50

_map_log: ContextVar[Optional[list]] = ContextVar("attention_map_log", default=None)


@contextmanager
def record_attention_maps():
    """Collect the (rows, cols) shape of every attention map built inside the block."""
    log = []
    token = _map_log.set(log)
    try:
        yield log
    finally:
        _map_log.reset(token)


def _note_map(attention_map):
    log = _map_log.get()
    if log is not None:
        log.append(tuple(attention_map.shape[-2:]))


class AttentionVariant(Enum):
    SA = "SA"
    KSA = "kSA"
    EKSA = "EkSA"
    NONE = "None"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        for variant in cls:
            if str(value).strip().lower() == variant.value.lower():
                return variant
        raise ConfigError(f"Unknown attention variant '{value}'.")


@dataclass
class AttentionConfig:
    variant: AttentionVariant = AttentionVariant.EKSA
    k: Optional[int] = DEFAULT_K
    residual: bool = True
    scale_init: float = 0.0

    def __post_init__(self):
        self.variant = AttentionVariant.parse(self.variant)
        if isinstance(self.k, str) and self.k.strip().lower() == "all":
            self.k = None
        if self.k is not None:
            if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 1:
                raise ConfigError(f"Attention k must be a positive integer or 'all', got {self.k}.")
            self.k = int(self.k)

    def validate(self, channels):
        if self.variant is AttentionVariant.EKSA and self.k is not None and self.k > channels:
            raise ConfigError(f"EkSA selects within {channels}-wide rows; k={self.k} is too large.")

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - {"variant", "k", "residual", "scale_init"}
        if unknown:
            raise ConfigError(f"Unknown attention settings: {', '.join(sorted(unknown))}.")
        return cls(**values)

    def to_dict(self):
        values = asdict(self)
        values["variant"] = self.variant.value
        values["k"] = "all" if self.k is None else self.k
        return values


def softmax_rows(y):
    """Row-wise softmax; -inf entries come out as exact zeros."""
    if torch.isnan(y).any() or torch.isposinf(y).any():
        raise NonFiniteError("softmax_rows accepts finite or -inf entries only.")
    if torch.isneginf(y).all(dim=-1).any():
        raise NonFiniteError("softmax_rows got a row with no finite entry.")
    return F.softmax(y, dim=-1)


def topk_mask(a, k):
    """
    Keep the k largest entries of every row and set the rest to -inf.

    Ties go to the lowest column index. Gradients flow to the kept entries
    only; the selection itself is treated as fixed.
    """
    if k is None:
        return a
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}.")
    if not torch.isfinite(a).all():
        raise NonFiniteError("topk_mask needs finite entries.")
    width = a.shape[-1]
    if k >= width:
        return a
    order = torch.sort(a.detach(), dim=-1, descending=True, stable=True).indices[..., :k]
    keep = torch.zeros_like(a, dtype=torch.bool).scatter_(-1, order, True)
    return a.masked_fill(~keep, float("-inf"))


def _check_triple(q, k, v):
    if q.shape != k.shape or k.shape != v.shape or q.dim() < 2:
        raise DimensionError(f"Q, K, V must share an n x d shape, got {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}.")


def attention_sa(q, k, v, linear, scale):
    _check_triple(q, k, v)
    attention_map = q @ k.transpose(-2, -1)
    _note_map(attention_map)
    return linear(softmax_rows(attention_map) @ v) * scale


def attention_ksa(q, k, v, top_k, linear, scale):
    _check_triple(q, k, v)
    n = q.shape[-2]
    if top_k is not None and top_k > n:
        raise ConfigError(f"kSA needs k <= n, got k={top_k} for {n} tokens.")
    if n > MAX_KSA_TOKENS:
        raise ConfigError(f"kSA builds an n x n map; {n} tokens exceed the {MAX_KSA_TOKENS} limit.")
    attention_map = q @ k.transpose(-2, -1)
    _note_map(attention_map)
    return linear(softmax_rows(topk_mask(attention_map, top_k)) @ v) * scale


def attention_eksa(q, k, v, top_k, linear, scale):
    _check_triple(q, k, v)
    d = q.shape[-1]
    if top_k is not None and top_k > d:
        raise ConfigError(f"EkSA needs k <= d, got k={top_k} for d={d}.")
    attention_map = v.transpose(-2, -1) @ k
    _note_map(attention_map)
    return linear(q @ softmax_rows(topk_mask(attention_map, top_k))) * scale


class EkSABlock(nn.Module):
    """
    Residual, scaled attention over the raw five-picture stack.

    A two-convolution stem turns the 15 stacked channels into the initial
    features; every spatial position is a token.
    """

    def __init__(self, channels=64, cfg=None):
        super().__init__()
        self.cfg = cfg or AttentionConfig()
        if self.cfg.variant is AttentionVariant.NONE:
            raise ConfigError("The attention block cannot be built with variant None.")
        self.cfg.validate(channels)
        self.stem = nn.Sequential(
            nn.Conv2d(3 * WINDOW_SIZE, channels, 3, 1, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1),
        )
        self.linear_q = nn.Linear(channels, channels)
        self.linear_k = nn.Linear(channels, channels)
        self.linear_v = nn.Linear(channels, channels)
        self.linear_out = nn.Linear(channels, channels)
        self.scale = nn.Parameter(torch.tensor(float(self.cfg.scale_init)))

    def forward(self, pictures):
        return eksa_block(pictures, self)


def eksa_block(pictures, block):
    cfg = block.cfg
    if cfg.variant is AttentionVariant.NONE:
        raise ConfigError("eksa_block must not run with attention variant None.")
    if pictures.dim() != 5 or pictures.shape[1:3] != (WINDOW_SIZE, 3):
        raise DimensionError(f"Expected N x {WINDOW_SIZE} x 3 x h x w pictures, got {tuple(pictures.shape)}.")
    n, _, _, h, w = pictures.shape
    initial = block.stem(pictures.reshape(n, 3 * WINDOW_SIZE, h, w))
    tokens = initial.flatten(2).transpose(1, 2)
    q, k, v = block.linear_q(tokens), block.linear_k(tokens), block.linear_v(tokens)

    if cfg.variant is AttentionVariant.SA:
        out = attention_sa(q, k, v, block.linear_out, block.scale)
    elif cfg.variant is AttentionVariant.KSA:
        out = attention_ksa(q, k, v, cfg.k, block.linear_out, block.scale)
    else:
        out = attention_eksa(q, k, v, cfg.k, block.linear_out, block.scale)

    out = out.transpose(1, 2).reshape(n, -1, h, w)
    return initial + out if cfg.residual else out
