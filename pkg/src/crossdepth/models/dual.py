"""The two depth branches and the dual-branch training model."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..types import BranchOutput, DepthRange, DualOutput
from .attention import SwinEncoder
from .blocks import ConvEncoder, CouplingUnit, Decoder, PredictionHead

STRIDE = 32


@dataclass(frozen=True)
class ModelConfig:
    channels_t: tuple[int, ...] = (24, 48, 96, 192)
    num_heads: tuple[int, ...] = (1, 2, 4, 8)
    blocks_per_stage: tuple[int, ...] = (2, 2, 2, 2)
    window_size: int = 4
    channels_c: tuple[int, ...] = (16, 32, 48, 64)
    decoder_width_t: int = 32
    decoder_width_c: int = 24
    depth_range: DepthRange = field(default_factory=DepthRange)
    coupling_enabled: bool = True
    uncertainty_head_enabled: bool = True
    coupling_zero_init: bool = False

    def __post_init__(self):
        for name in ("channels_t", "num_heads", "blocks_per_stage", "channels_c"):
            value = tuple(int(v) for v in getattr(self, name))
            if len(value) != 4:
                raise ValueError(f"{name} needs 4 entries, got {value}")
            object.__setattr__(self, name, value)
        if isinstance(self.depth_range, (tuple, list)):
            object.__setattr__(self, "depth_range", DepthRange(*self.depth_range))
        elif isinstance(self.depth_range, dict):
            object.__setattr__(self, "depth_range", DepthRange(**self.depth_range))
        for c, h in zip(self.channels_t, self.num_heads):
            if c % h:
                raise ValueError(f"channels {c} not divisible by heads {h}")
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")


def pad_to_stride(x: torch.Tensor, stride: int = STRIDE) -> torch.Tensor:
    h, w = x.shape[-2:]
    ph, pw = (-h) % stride, (-w) % stride
    if ph == 0 and pw == 0:
        return x
    if h < 8 or w < 8:
        raise ValueError(f"input {h}x{w} too small to pad to a multiple of {stride}")
    return F.pad(x, (0, pw, 0, ph), mode="replicate")


def _crop(out: BranchOutput, h: int, w: int) -> BranchOutput:
    return BranchOutput(depth=out.depth[..., :h, :w], uncertainty=out.uncertainty[..., :h, :w])


class TransformerBranch(nn.Module):
    """Windowed-attention encoder, conv decoder, depth+uncertainty head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.encoder = SwinEncoder(cfg.channels_t, cfg.num_heads, cfg.window_size,
                                   cfg.blocks_per_stage)
        self.decoder = Decoder(cfg.channels_t, cfg.decoder_width_t, norm=False)
        self.head = PredictionHead(self.decoder.out_channels, cfg.depth_range,
                                   cfg.uncertainty_head_enabled)

    def forward(self, image: torch.Tensor) -> tuple[BranchOutput, list[torch.Tensor]]:
        h, w = image.shape[-2:]
        x = pad_to_stride(image)
        pyramid = self.encoder(x)
        out = self.head(self.decoder(pyramid), x.shape[-2:])
        return _crop(out, h, w), pyramid


class CNNBranch(nn.Module):
    """Convolutional encoder that optionally absorbs transferred features after each stage."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.coupling_enabled = cfg.coupling_enabled
        self.encoder = ConvEncoder(cfg.channels_c)
        self.couplings = nn.ModuleList(
            CouplingUnit(cc, ct, zero_init=cfg.coupling_zero_init)
            for cc, ct in zip(cfg.channels_c, cfg.channels_t)
        ) if cfg.coupling_enabled else nn.ModuleList()
        self.decoder = Decoder(cfg.channels_c, cfg.decoder_width_c, norm=True)
        self.head = PredictionHead(self.decoder.out_channels, cfg.depth_range,
                                   cfg.uncertainty_head_enabled)

    def forward(self, image: torch.Tensor, transferred: list[torch.Tensor] | None = None) -> BranchOutput:
        if self.coupling_enabled:
            if transferred is None:
                raise ValueError("coupling is enabled but no transferred features were given")
            if len(transferred) != len(self.couplings):
                raise ValueError(f"expected {len(self.couplings)} transferred stages, "
                                 f"got {len(transferred)}")
        h, w = image.shape[-2:]
        x = self.encoder.stem(pad_to_stride(image))
        feats = []
        for i, stage in enumerate(self.encoder.stages):
            x = stage(x)
            if self.coupling_enabled:
                x = self.couplings[i](x, transferred[i])
            feats.append(x)
        out = self.head(self.decoder(feats), (x.shape[-2] * STRIDE, x.shape[-1] * STRIDE))
        return _crop(out, h, w)


class DualBranchModel(nn.Module):
    """Both branches; the CNN branch is only needed for training.

    Parameters are initialised per branch from ``seed`` and ``seed + 1`` so
    the transformer's initial weights do not depend on the CNN configuration.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.transformer = TransformerBranch(cfg)
            torch.manual_seed(seed + 1)
            self.cnn = CNNBranch(cfg)

    def forward(self, image: torch.Tensor) -> DualOutput:
        t_out, pyramid = self.transformer(image)
        c_out = self.cnn(image, pyramid if self.cfg.coupling_enabled else None)
        return DualOutput(transformer=t_out, cnn=c_out)

    @torch.no_grad()
    def infer(self, image: torch.Tensor) -> BranchOutput:
        return self.transformer(image)[0]


class DepthEstimator(nn.Module):
    """Inference-only model: the transformer branch and nothing else."""

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.transformer = TransformerBranch(cfg)

    @torch.no_grad()
    def forward(self, image: torch.Tensor) -> BranchOutput:
        return self.transformer(image)[0]


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
