"""Convolutional building blocks: conv encoder, coupling unit, decoder, prediction head."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..types import BranchOutput, DepthRange


def conv_bn_relu(cin: int, cout: int, k: int = 3, stride: int = 1, norm: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(cin, cout, k, stride, k // 2, bias=not norm)]
    if norm:
        layers.append(nn.BatchNorm2d(cout))
    layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class ConvEncoder(nn.Module):
    """Stride-2 stem then four stride-2 stages, giving features at /4, /8, /16, /32."""

    def __init__(self, channels=(16, 32, 48, 64), stem_channels: int = 16):
        super().__init__()
        self.channels = tuple(channels)
        self.stem = conv_bn_relu(3, stem_channels, stride=2)
        self.stages = nn.ModuleList()
        cin = stem_channels
        for cout in channels:
            self.stages.append(nn.Sequential(conv_bn_relu(cin, cout, stride=2),
                                             conv_bn_relu(cout, cout)))
            cin = cout


class CouplingUnit(nn.Module):
    """Fuse a transferred transformer feature into a CNN feature.

    align (1x1, C_t -> C_c) -> add -> fuse (3x3) -> adjust (1x1) -> residual add.
    Each conv is followed by BatchNorm, ReLU after all but the last; the
    transferred feature is detached so this path never trains the transformer.
    """

    def __init__(self, cnn_channels: int, transformer_channels: int, zero_init: bool = False):
        super().__init__()
        self.align = conv_bn_relu(transformer_channels, cnn_channels, k=1)
        self.fuse = conv_bn_relu(cnn_channels, cnn_channels, k=3)
        self.adjust = nn.Sequential(nn.Conv2d(cnn_channels, cnn_channels, 1, bias=False),
                                    nn.BatchNorm2d(cnn_channels))
        if zero_init:
            nn.init.zeros_(self.adjust[0].weight)

    def forward(self, f_cnn: torch.Tensor, f_t: torch.Tensor) -> torch.Tensor:
        f_t = f_t.detach()
        if f_t.shape[-2:] != f_cnn.shape[-2:]:
            f_t = F.interpolate(f_t, size=f_cnn.shape[-2:], mode="bilinear", align_corners=False)
        fused = self.fuse(f_cnn + self.align(f_t))
        return f_cnn + self.adjust(fused)


class Decoder(nn.Module):
    """U-Net style top-down decoder over a 4-level pyramid, output at /2 resolution."""

    def __init__(self, channels, width: int = 32, norm: bool = False):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.top = conv_bn_relu(c4, width * 2, norm=norm)
        self.up3 = conv_bn_relu(width * 2 + c3, width * 2, norm=norm)
        self.up2 = conv_bn_relu(width * 2 + c2, width, norm=norm)
        self.up1 = conv_bn_relu(width + c1, width, norm=norm)
        self.up0 = conv_bn_relu(width, width, norm=norm)
        self.out_channels = width

    @staticmethod
    def _up(x: torch.Tensor, ref: torch.Tensor | None = None, scale: int = 2) -> torch.Tensor:
        size = ref.shape[-2:] if ref is not None else (x.shape[-2] * scale, x.shape[-1] * scale)
        return F.interpolate(x, size=size, mode="bilinear", align_corners=False)

    def forward(self, feats: list[torch.Tensor]) -> torch.Tensor:
        f1, f2, f3, f4 = feats
        x = self.top(f4)
        x = self.up3(torch.cat([self._up(x, f3), f3], 1))
        x = self.up2(torch.cat([self._up(x, f2), f2], 1))
        x = self.up1(torch.cat([self._up(x, f1), f1], 1))
        return self.up0(self._up(x))


class PredictionHead(nn.Module):
    """Two-channel head: bounded depth and [0, 1] uncertainty.

    Depth is a sigmoid interpolated in log space between ``d_min`` and
    ``d_max``; uncertainty is a plain sigmoid. Pre-activations are resized to
    the target resolution before squashing so bounds hold at every pixel.
    """

    def __init__(self, in_channels: int, depth_range: DepthRange, with_uncertainty: bool = True):
        super().__init__()
        self.depth_range = depth_range
        self.with_uncertainty = with_uncertainty
        self.conv = nn.Conv2d(in_channels, 2 if with_uncertainty else 1, 3, padding=1)

    def activate(self, logits: torch.Tensor) -> BranchOutput:
        lo, hi = math.log(self.depth_range.d_min), math.log(self.depth_range.d_max)
        depth = torch.exp(lo + (hi - lo) * torch.sigmoid(logits[:, :1]))
        depth = depth.clamp(self.depth_range.d_min, self.depth_range.d_max)
        if not self.with_uncertainty:
            return BranchOutput(depth=depth, uncertainty=torch.zeros_like(depth))
        return BranchOutput(depth=depth, uncertainty=torch.sigmoid(logits[:, 1:2]))

    def forward(self, x: torch.Tensor, size: tuple[int, int]) -> BranchOutput:
        logits = self.conv(x)
        if tuple(logits.shape[-2:]) != tuple(size):
            logits = F.interpolate(logits, size=size, mode="bilinear", align_corners=False)
        return self.activate(logits)
