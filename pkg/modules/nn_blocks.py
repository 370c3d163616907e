from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

from errors import DimensionError, NonFiniteError
from logging_config import get_logger

logger = get_logger(__name__)


@dataclass
class ConvParams:
    """Weights C_out x C_in x k x k and bias C_out of a stride-1, shape-preserving convolution."""

    weight: torch.Tensor
    bias: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.weight.dim() != 4 or self.weight.shape[-1] != self.weight.shape[-2]:
            raise DimensionError(f"Kernel must be C_out x C_in x k x k, got {tuple(self.weight.shape)}.")
        if self.kernel_size % 2 == 0:
            raise DimensionError(f"Kernel size must be odd, got {self.kernel_size}.")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"Bias must have {self.weight.shape[0]} entries, got {tuple(self.bias.shape)}.")

    @classmethod
    def of(cls, conv):
        return cls(conv.weight, conv.bias)

    @property
    def kernel_size(self):
        return self.weight.shape[-1]

    @property
    def padding(self):
        return (self.kernel_size - 1) // 2

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]


def _check_input(x, params):
    if x.dim() != 4:
        raise DimensionError(f"Expected an N x C x H x W tensor, got {tuple(x.shape)}.")
    if x.shape[1] != params.in_channels:
        raise DimensionError(f"Input has {x.shape[1]} channels, kernel expects {params.in_channels}.")


def conv2d(x, params):
    _check_input(x, params)
    return F.conv2d(x, params.weight, params.bias, stride=1, padding=params.padding)


def res_block(x, params1, params2):
    """y = x + conv(relu(conv(x))): the plain residual block, no normalization."""
    if params1.in_channels != params2.out_channels or params1.out_channels != params2.in_channels:
        raise DimensionError("Residual block convolutions must map C -> C -> C.")
    return x + conv2d(F.relu(conv2d(x, params1)), params2)


def deform_conv2d(x, offsets, params):
    """
    Deformable convolution: every kernel tap samples x at its regular position
    displaced by a learned (dy, dx) offset, with bilinear interpolation and zeros
    outside the image. Offsets are N x (2 k^2 G) x H x W, ordered per group, then
    per tap in row-major order, then (dy, dx).
    """
    _check_input(x, params)
    taps = 2 * params.kernel_size ** 2
    if offsets.dim() != 4 or offsets.shape[1] % taps:
        raise DimensionError(f"Offsets need a multiple of {taps} channels, got {tuple(offsets.shape)}.")
    groups = offsets.shape[1] // taps
    if x.shape[1] % groups:
        raise DimensionError(f"{x.shape[1]} input channels cannot be split into {groups} deformable groups.")
    if offsets.shape[0] != x.shape[0] or offsets.shape[-2:] != x.shape[-2:]:
        raise DimensionError(f"Offsets {tuple(offsets.shape)} do not match input {tuple(x.shape)}.")
    if not torch.isfinite(offsets).all():
        raise NonFiniteError("Deformable offsets contain NaN or infinite values.")
    return torchvision.ops.deform_conv2d(
        x, offsets, params.weight, params.bias, stride=1, padding=params.padding
    )


def default_init_weights(module_list, scale=1.0, bias_fill=0.0):
    """Kaiming-normal init scaled down for residual branches."""
    if not isinstance(module_list, (list, tuple)):
        module_list = [module_list]
    for module in module_list:
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                nn.init.kaiming_normal_(m.weight)
                m.weight.data *= scale
                if m.bias is not None:
                    m.bias.data.fill_(bias_fill)


class ResBlock(nn.Module):
    def __init__(self, channels=64):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)
        default_init_weights([self.conv1, self.conv2], 0.1)

    def forward(self, x):
        return res_block(x, ConvParams.of(self.conv1), ConvParams.of(self.conv2))


def make_layer(block, num_blocks, **kwargs):
    return nn.Sequential(*[block(**kwargs) for _ in range(num_blocks)])


def _scalar_total(output):
    if isinstance(output, (tuple, list)):
        return sum(_scalar_total(o) for o in output)
    return output.sum()


def _near_kink_moved(kinks, inputs, near, plus_kinks):
    minus_kinks = [k.detach() for k in kinks(*inputs)]
    return any(bool(((p != m) & n).any()) for p, m, n in zip(plus_kinks, minus_kinks, near))


def grad_check(op, inputs, eps=1e-6, atol=1e-3, kinks=None, kink_tol=1e-3):
    """
    Compare autograd gradients of sum(op(*inputs)) with central finite differences.

    Every floating-point tensor in inputs is checked in double precision. The
    error per element is |analytic - numeric| / max(|analytic|, |numeric|, atol);
    the maximum over all elements is returned.

    kinks(*inputs) may return the pre-activations of piecewise-linear units
    such as relu. An element whose perturbation moves a pre-activation lying
    within kink_tol of zero is not checked.
    """
    inputs = [
        t.detach().clone().double().requires_grad_(True) if torch.is_tensor(t) and t.is_floating_point() else t
        for t in inputs
    ]
    tensors = [t for t in inputs if torch.is_tensor(t) and t.requires_grad]

    total = _scalar_total(op(*inputs))
    if not torch.isfinite(total):
        raise NonFiniteError("Operation produced a non-finite value at the evaluation point.")
    analytic = torch.autograd.grad(total, tensors, allow_unused=True)

    worst, skipped = 0.0, 0
    with torch.no_grad():
        near = [k.abs() <= kink_tol for k in kinks(*inputs)] if kinks else []
        for tensor, grad in zip(tensors, analytic):
            grad = torch.zeros_like(tensor) if grad is None else grad
            flat, flat_grad = tensor.view(-1), grad.reshape(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + eps
                plus = _scalar_total(op(*inputs)).item()
                plus_kinks = [k.detach().clone() for k in kinks(*inputs)] if kinks else []
                flat[i] = original - eps
                minus = _scalar_total(op(*inputs)).item()
                crossing = bool(kinks) and _near_kink_moved(kinks, inputs, near, plus_kinks)
                flat[i] = original
                if not (torch.isfinite(torch.tensor(plus)) and torch.isfinite(torch.tensor(minus))):
                    raise NonFiniteError(f"Non-finite value while perturbing element {i}.")
                if crossing:
                    skipped += 1
                    continue
                numeric = (plus - minus) / (2 * eps)
                exact = flat_grad[i].item()
                error = abs(exact - numeric) / max(abs(exact), abs(numeric), atol)
                worst = max(worst, error)
    if skipped:
        logger.debug(f"grad_check skipped {skipped} elements next to a kink")
    logger.debug(f"grad_check max relative error {worst:.3e}")
    return worst
