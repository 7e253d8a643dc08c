"""Small hierarchical windowed-attention encoder (Swin-style, toy scale)."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

MASK_VALUE = -100.0


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    # (N, H, W, C) -> (N * nW, ws * ws, C)
    n, h, w, c = x.shape
    x = x.view(n, h // ws, ws, w // ws, ws, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, c)


def window_reverse(windows: torch.Tensor, ws: int, h: int, w: int) -> torch.Tensor:
    n = windows.shape[0] // ((h // ws) * (w // ws))
    x = windows.view(n, h // ws, w // ws, ws, ws, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(n, h, w, -1)


def attention_mask(h: int, w: int, hp: int, wp: int, ws: int, shift: int,
                   device=None) -> torch.Tensor | None:
    """Additive mask ``(nW, ws*ws, ws*ws)`` blocking cross-region and padded keys."""
    if shift == 0 and hp == h and wp == w:
        return None
    region = torch.zeros(1, hp, wp, 1, device=device)
    if shift > 0:
        cnt = 0
        for hs in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
            for wsl in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
                region[:, hs, wsl, :] = cnt
                cnt += 1
    pad = torch.zeros(1, hp, wp, 1, device=device)
    pad[:, h:, :, :] = 1
    pad[:, :, w:, :] = 1
    if shift > 0:
        pad = torch.roll(pad, shifts=(-shift, -shift), dims=(1, 2))
    region_w = window_partition(region, ws).squeeze(-1)
    pad_w = window_partition(pad, ws).squeeze(-1)
    mask = region_w.unsqueeze(1) != region_w.unsqueeze(2)
    mask = mask | (pad_w.unsqueeze(1) > 0)
    return torch.zeros(mask.shape, device=device).masked_fill(mask, MASK_VALUE)


class WindowAttention(nn.Module):
    def __init__(self, dim: int, window_size: int, num_heads: int):
        super().__init__()
        self.ws = window_size
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.rel_bias = nn.Parameter(torch.zeros((2 * window_size - 1) ** 2, num_heads))
        nn.init.trunc_normal_(self.rel_bias, std=0.02)

        coords = torch.stack(torch.meshgrid(torch.arange(window_size), torch.arange(window_size),
                                            indexing="ij")).flatten(1)
        rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0) + (window_size - 1)
        self.register_buffer("rel_index", rel[..., 0] * (2 * window_size - 1) + rel[..., 1],
                             persistent=False)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.rel_bias[self.rel_index.view(-1)].view(n, n, -1).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(b // nw, nw, self.num_heads, n, n) + mask[None, :, None]
            attn = attn.view(b, self.num_heads, n, n)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class SwinBlock(nn.Module):
    """Pre-norm windowed attention + MLP; ``shifted`` rolls the grid by half a window."""

    def __init__(self, dim: int, num_heads: int, window_size: int, shifted: bool,
                 mlp_ratio: float = 2.0):
        super().__init__()
        self.ws = window_size
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (N, H, W, C)
        n, h, w, c = x.shape
        ws = self.ws
        # a grid that fits in one window gains nothing from shifting
        shift = ws // 2 if self.shifted and max(h, w) > ws else 0
        shortcut = x
        x = self.norm1(x)
        hp, wp = -(-h // ws) * ws, -(-w // ws) * ws
        if hp != h or wp != w:
            x = F.pad(x, (0, 0, 0, wp - w, 0, hp - h))
        if shift:
            x = torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))
        mask = attention_mask(h, w, hp, wp, ws, shift, device=x.device)
        windows = self.attn(window_partition(x, ws), mask)
        x = window_reverse(windows, ws, hp, wp)
        if shift:
            x = torch.roll(x, shifts=(shift, shift), dims=(1, 2))
        x = shortcut + x[:, :h, :w, :]
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    """Halve resolution, double channels: 2x2 neighbourhood concat + linear."""

    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, out_dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            x = F.pad(x, (0, 0, 0, w % 2, 0, h % 2))
        x = torch.cat([x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]], -1)
        return self.reduction(self.norm(x))


class SwinEncoder(nn.Module):
    """Patch embedding (stride 4) followed by four attention stages at /4, /8, /16, /32."""

    def __init__(self, channels=(24, 48, 96, 192), num_heads=(1, 2, 4, 8),
                 window_size: int = 4, depths=(2, 2, 2, 2)):
        super().__init__()
        if not (len(channels) == len(num_heads) == len(depths) == 4):
            raise ValueError("encoder needs exactly 4 stages")
        self.channels = tuple(channels)
        self.patch_embed = nn.Conv2d(3, channels[0], kernel_size=4, stride=4)
        self.embed_norm = nn.LayerNorm(channels[0])
        self.merges = nn.ModuleList()
        self.stages = nn.ModuleList()
        self.out_norms = nn.ModuleList()
        for i, (dim, heads, depth) in enumerate(zip(channels, num_heads, depths)):
            if i > 0:
                self.merges.append(PatchMerging(channels[i - 1], dim))
            blocks = [SwinBlock(dim, heads, window_size, shifted=bool(j % 2)) for j in range(depth)]
            self.stages.append(nn.Sequential(*blocks))
            self.out_norms.append(nn.LayerNorm(dim))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = self.embed_norm(self.patch_embed(x).permute(0, 2, 3, 1))
        feats = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.merges[i - 1](x)
            x = stage(x)
            feats.append(self.out_norms[i](x).permute(0, 3, 1, 2).contiguous())
        return feats
