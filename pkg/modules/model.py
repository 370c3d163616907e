"""
The multi-picture upsampling network.

Feature extraction and deformable alignment form the local branch, the
attention block over the raw pictures forms the global branch; their sum (or
concatenation) is reconstructed by the branch the indicator selects, mapped to
RGB by Conv_out and finally merged with the observed pixels of the reference.
"""
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import torch
import torch.nn as nn

from align import AlignVariant, Aligner, FeatureExtractor, LocalFusion, extract_features
from attention import AttentionConfig, AttentionVariant, EkSABlock
from degrade import (
    DEFAULT_PATTERN,
    WINDOW_CENTER,
    FieldParity,
    IndicatorFlag,
    Task,
    cfa_mask,
    validate_pattern,
)
from errors import ConfigError, DimensionError, IndicatorMismatchError
from logging_config import get_logger
from nn_blocks import ConvParams, ResBlock, conv2d, make_layer

logger = get_logger(__name__)


class Fusion(Enum):
    ADD = "Add"
    CONCAT = "Concat"


class ReconMode(Enum):
    SEPARATE = "Separate"
    SINGLE = "Single"


def _parse_enum(enum_cls, value, name):
    if isinstance(value, enum_cls):
        return value
    for member in enum_cls:
        if str(value).strip().lower() == member.value.lower():
            return member
    raise ConfigError(f"Unknown {name} '{value}'.")


@dataclass
class ModelConfig:
    task: Task = Task.DEINTERLACE
    channels: int = 64
    feature_res_blocks: int = 5
    align_blocks: int = 4
    align_variant: AlignVariant = AlignVariant.DFCONV
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    fusion: Fusion = Fusion.ADD
    recon_mode: ReconMode = ReconMode.SEPARATE
    recon_depth: int = 7
    recon_branches: Optional[int] = None
    deform_groups: int = 8
    cfa_pattern: str = DEFAULT_PATTERN
    seed: int = 0

    def __post_init__(self):
        self.task = Task.parse(self.task)
        self.align_variant = AlignVariant.parse(self.align_variant)
        self.fusion = _parse_enum(Fusion, self.fusion, "fusion mode")
        self.recon_mode = _parse_enum(ReconMode, self.recon_mode, "reconstruction mode")
        if isinstance(self.attention, dict):
            self.attention = AttentionConfig.from_dict(self.attention)
        self.cfa_pattern = validate_pattern(self.cfa_pattern)

    @property
    def indicators(self):
        return IndicatorFlag.members_for(self.task)

    def validate(self):
        for name in ("channels", "feature_res_blocks", "align_blocks", "deform_groups"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}.")
        if self.recon_depth < 0:
            raise ConfigError(f"recon_depth cannot be negative, got {self.recon_depth}.")
        if self.channels % self.deform_groups:
            raise ConfigError(f"{self.channels} channels cannot form {self.deform_groups} deformable groups.")
        expected = len(self.indicators) if self.recon_mode is ReconMode.SEPARATE else 1
        if self.recon_branches is not None and self.recon_branches != expected:
            raise ConfigError(
                f"{self.task.value} with {self.recon_mode.value} reconstruction has {expected} branches, "
                f"not {self.recon_branches}."
            )
        self.attention.validate(self.channels)
        return self

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown model settings: {', '.join(sorted(unknown))}.")
        return cls(**values)

    def to_dict(self):
        values = asdict(self)
        values.update(
            task=self.task.value,
            align_variant=self.align_variant.value,
            attention=self.attention.to_dict(),
            fusion=self.fusion.value,
            recon_mode=self.recon_mode.value,
        )
        if self.recon_branches is None:
            del values["recon_branches"]
        return values


def toy_model_config(task=Task.DEINTERLACE, **overrides):
    """Small network for smoke runs: 16 channels, one alignment block, recon depth 2."""
    cfg = ModelConfig(
        task=Task.parse(task),
        channels=16,
        align_blocks=1,
        recon_depth=2,
        attention=AttentionConfig(k=8),
    )
    return replace(cfg, **overrides)


class RestorationNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg.validate()
        c = cfg.channels
        self.extractor = FeatureExtractor(c, cfg.feature_res_blocks)
        self.aligner = Aligner(c, cfg.align_blocks, cfg.deform_groups, cfg.align_variant)
        self.local_fusion = LocalFusion(c)

        self.attention = None
        self.concat_fusion = None
        if cfg.attention.variant is not AttentionVariant.NONE:
            self.attention = EkSABlock(c, cfg.attention)
            if cfg.fusion is Fusion.CONCAT:
                self.concat_fusion = nn.Conv2d(2 * c, c, 1, 1, 0)

        if cfg.recon_mode is ReconMode.SEPARATE:
            self.recon = nn.ModuleDict(
                {flag.value: make_layer(ResBlock, cfg.recon_depth, channels=c) for flag in cfg.indicators}
            )
        else:
            self.recon = make_layer(ResBlock, cfg.recon_depth, channels=c)
        self.conv_out = nn.Conv2d(c, 3, 3, 1, 1)

    def integrate(self, inputs):
        """Local (aligned, fused) features plus the attention features."""
        stack = extract_features(inputs, self.extractor)
        local = self.local_fusion(self.aligner(stack))
        if self.attention is None:
            return local
        global_features = self.attention(inputs)
        if self.concat_fusion is not None:
            return self.concat_fusion(torch.cat([local, global_features], dim=1))
        return local + global_features

    def forward(self, inputs, indicator, clamp=False):
        indicators = normalize_indicators(indicator, inputs.shape[0], self.cfg.task)
        fea = self.integrate(inputs)
        recon = route_recon(fea, indicators, self)
        recon_rgb = conv2d(recon, ConvParams.of(self.conv_out))
        return assemble_output(
            recon_rgb, inputs[:, WINDOW_CENTER], indicators, self.cfg.task, self.cfg.cfa_pattern, clamp
        )


def normalize_indicators(indicator, batch_size, task):
    """One IndicatorFlag per batch element, all valid for the task."""
    if isinstance(indicator, (list, tuple)):
        flags = [IndicatorFlag.parse(i) for i in indicator]
    else:
        flags = [IndicatorFlag.parse(indicator)] * batch_size
    if len(flags) != batch_size:
        raise DimensionError(f"{len(flags)} indicators for a batch of {batch_size}.")
    for flag in flags:
        if flag.task is not task:
            raise IndicatorMismatchError(flag.value, task.value)
    return flags


def route_recon(fea, indicator, model):
    """Send every batch element through the reconstruction branch its indicator names."""
    cfg = model.cfg
    flags = normalize_indicators(indicator, fea.shape[0], cfg.task)
    if cfg.recon_mode is ReconMode.SINGLE:
        return model.recon(fea)

    order, pieces = [], []
    for flag in dict.fromkeys(flags):
        idx = [i for i, f in enumerate(flags) if f is flag]
        pieces.append(model.recon[flag.value](fea[idx]))
        order.extend(idx)
    if len(pieces) == 1:
        return pieces[0]
    inverse = torch.argsort(torch.tensor(order, device=fea.device))
    return torch.cat(pieces)[inverse]


def weave_tensor(known, estimated, known_parity):
    """Row-interleave N x C x h x w fields into N x C x 2h x w frames."""
    rows = (known, estimated) if known_parity is FieldParity.ODD else (estimated, known)
    n, c, h, w = known.shape
    return torch.stack(rows, dim=3).reshape(n, c, 2 * h, w)


def assemble_output(recon_rgb, reference, indicator, task, pattern=DEFAULT_PATTERN, clamp=True):
    """
    Merge the estimate with the observed pixels of the reference picture.

    Deinterlacing weaves the estimated field with the reference field;
    demosaicing keeps every observed Bayer sample of the reference.
    """
    task = Task.parse(task)
    if recon_rgb.shape != reference.shape:
        raise DimensionError(f"Estimate {tuple(recon_rgb.shape)} and reference {tuple(reference.shape)} differ.")
    flags = normalize_indicators(indicator, recon_rgb.shape[0], task)
    if clamp:
        recon_rgb = recon_rgb.clamp(0.0, 1.0)

    if task is Task.DEINTERLACE:
        known_odd = torch.tensor(
            [f.missing_parity is FieldParity.EVEN for f in flags], device=recon_rgb.device
        ).view(-1, 1, 1, 1)
        return torch.where(
            known_odd,
            weave_tensor(reference, recon_rgb, FieldParity.ODD),
            weave_tensor(reference, recon_rgb, FieldParity.EVEN),
        )

    h, w = reference.shape[-2:]
    observed = torch.from_numpy(cfa_mask(pattern, h, w)).permute(2, 0, 1).to(recon_rgb.device)
    return torch.where(observed.unsqueeze(0), reference, recon_rgb)


def build_model(cfg):
    """Construct the network deterministically under cfg.seed."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = RestorationNet(cfg)
    count = sum(p.numel() for p in model.parameters())
    logger.info(f"Built {cfg.task.value} model with {count:,} parameters")
    return model, count


def parameter_breakdown(model):
    """Parameter counts per top-level component, in construction order."""
    return {name: sum(p.numel() for p in child.parameters()) for name, child in model.named_children()
            if child is not None}


@torch.no_grad()
def infer_frame(model, inputs, indicator=None):
    """
    Reconstruct full frames for inference, clamped to [0, 1].

    For demosaicing in Separate mode every channel comes from its own branch
    (indicator None runs all three); observed samples keep their exact values.
    """
    was_training = model.training
    model.eval()
    try:
        cfg = model.cfg
        if indicator is not None:
            return model(inputs, indicator, clamp=True)
        if cfg.task is Task.DEINTERLACE:
            raise IndicatorMismatchError("None", cfg.task.value)
        if cfg.recon_mode is ReconMode.SINGLE:
            return model(inputs, IndicatorFlag.CHANNEL_R, clamp=True)
        fea = model.integrate(inputs)
        channels = []
        for flag in cfg.indicators:
            recon = model.recon[flag.value](fea)
            rgb = conv2d(recon, ConvParams.of(model.conv_out))
            channels.append(rgb[:, flag.channel])
        recon_rgb = torch.stack(channels, dim=1)
        return assemble_output(recon_rgb, inputs[:, WINDOW_CENTER], IndicatorFlag.CHANNEL_R, cfg.task,
                               cfg.cfa_pattern, clamp=True)
    finally:
        model.train(was_training)
