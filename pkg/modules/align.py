from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

from degrade import WINDOW_CENTER, WINDOW_SIZE
from errors import ConfigError, DimensionError
from logging_config import get_logger
from nn_blocks import ConvParams, ResBlock, conv2d, deform_conv2d, make_layer

logger = get_logger(__name__)

# warn when deformable offsets wander this far (in pixels) on average
OFFSET_WARNING_PIXELS = 50.0


class AlignVariant(Enum):
    DFCONV = "DfConv"
    DF = "Df"
    DFRES = "DfRes"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for variant in cls:
            if str(value).strip().lower() == variant.value.lower():
                return variant
        raise ConfigError(f"Unknown alignment variant '{value}'.")


class FeatureExtractor(nn.Module):
    """Conv_1 (3 -> C) followed by residual blocks, shared by the five pictures."""

    def __init__(self, channels=64, num_blocks=5):
        super().__init__()
        self.conv_first = nn.Conv2d(3, channels, 3, 1, 1)
        self.res_blocks = make_layer(ResBlock, num_blocks, channels=channels)

    def forward(self, pictures):
        return extract_features(pictures, self)


def _stack_pictures(pictures):
    if isinstance(pictures, (list, tuple)):
        pictures = torch.stack(list(pictures), dim=1)
    if pictures.dim() != 5 or pictures.shape[1] != WINDOW_SIZE:
        raise DimensionError(f"Expected N x {WINDOW_SIZE} x 3 x h x w pictures, got {tuple(pictures.shape)}.")
    if pictures.shape[2] != 3:
        raise DimensionError(f"Pictures must have 3 channels, got {pictures.shape[2]}.")
    return pictures


def extract_features(pictures, extractor):
    """Map each of the five pictures to a C-channel feature tensor (the FeatureStack)."""
    pictures = _stack_pictures(pictures)
    n, t, c, h, w = pictures.shape
    features = extractor.res_blocks(conv2d(pictures.reshape(n * t, c, h, w), ConvParams.of(extractor.conv_first)))
    features = features.view(n, t, -1, h, w)
    return [features[:, i] for i in range(t)]


class DfLayer(nn.Module):
    """
    Deformable layer whose offsets are projected from another feature tensor.

    The 3x3 projection maps the offset source (C channels) to 2*9*G offset
    channels and starts at zero, so an untrained layer is a plain convolution.
    """

    def __init__(self, channels=64, deform_groups=8):
        super().__init__()
        if channels % deform_groups:
            raise ConfigError(f"{channels} channels cannot be split into {deform_groups} deformable groups.")
        self.offset_proj = nn.Conv2d(channels, 2 * 9 * deform_groups, 3, 1, 1)
        nn.init.zeros_(self.offset_proj.weight)
        nn.init.zeros_(self.offset_proj.bias)
        self.conv = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, offset_source, fea):
        offsets = conv2d(offset_source, ConvParams.of(self.offset_proj))
        magnitude = offsets.detach().abs().mean()
        if magnitude > OFFSET_WARNING_PIXELS:
            logger.warning(f"Offset abs mean is {magnitude:.1f}, larger than {OFFSET_WARNING_PIXELS}.")
        return deform_conv2d(fea, offsets, ConvParams.of(self.conv))


class DfConvBlock(nn.Module):
    def __init__(self, channels=64, deform_groups=8, variant=AlignVariant.DFCONV):
        super().__init__()
        self.variant = AlignVariant.parse(variant)
        self.df1 = DfLayer(channels, deform_groups)
        self.df2 = DfLayer(channels, deform_groups)
        if self.variant is not AlignVariant.DF:
            self.mid_conv = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, fea_ref, fea_i):
        return dfconv_block(fea_ref, fea_i, self)


def dfconv_block(fea_ref, fea_i, block):
    """
    Align fea_i to the reference: the reference features drive the offsets of
    the first Df layer, its (refined) output drives the offsets of the second.
    """
    if fea_ref.shape != fea_i.shape:
        raise DimensionError(f"Reference {tuple(fea_ref.shape)} and support {tuple(fea_i.shape)} differ.")
    interm_out = block.df1(fea_ref, fea_i)
    if block.variant is AlignVariant.DF:
        offset_source = interm_out
    else:
        offset_source = F.relu(conv2d(interm_out, ConvParams.of(block.mid_conv)))
    out = block.df2(offset_source, fea_i)
    if block.variant is AlignVariant.DFRES:
        out = out + fea_i
    return out


class Aligner(nn.Module):
    """One DfConv block per supporting picture; the reference is not re-aligned."""

    def __init__(self, channels=64, num_blocks=4, deform_groups=8, variant=AlignVariant.DFCONV):
        super().__init__()
        supports = WINDOW_SIZE - 1
        if not 1 <= num_blocks <= supports:
            raise ConfigError(f"align_blocks must be between 1 and {supports}, got {num_blocks}.")
        self.blocks = nn.ModuleList(
            [DfConvBlock(channels, deform_groups, variant) for _ in range(num_blocks)]
        )

    def block_for(self, position):
        support = position if position < WINDOW_CENTER else position - 1
        return self.blocks[support % len(self.blocks)]

    def forward(self, stack):
        return align_all(stack, self)


def align_all(stack, aligner):
    if len(stack) != WINDOW_SIZE:
        raise DimensionError(f"Feature stack must hold {WINDOW_SIZE} tensors, got {len(stack)}.")
    fea_ref = stack[WINDOW_CENTER]
    aligned = []
    for position, fea in enumerate(stack):
        if position == WINDOW_CENTER:
            aligned.append(fea_ref)
        else:
            aligned.append(aligner.block_for(position)(fea_ref, fea))
    return aligned


class LocalFusion(nn.Module):
    def __init__(self, channels=64):
        super().__init__()
        self.conv = nn.Conv2d(WINDOW_SIZE * channels, channels, 1, 1, 0)

    def forward(self, aligned):
        return fuse_local(aligned, self)


def fuse_local(aligned, fusion):
    """Concatenate the five aligned tensors along channels and mix them with a 1x1 conv."""
    if len(aligned) != WINDOW_SIZE or any(a.shape != aligned[0].shape for a in aligned):
        raise DimensionError("Local fusion needs five aligned tensors of identical shape.")
    return conv2d(torch.cat(list(aligned), dim=1), ConvParams.of(fusion.conv))
