"""Paired image/depth augmentation, including CutFlip.

Every function takes an explicit ``numpy.random.Generator`` so a sample's
augmentation is fully determined by its seed. Geometric ops are applied
identically to image and depth; photometric ops never touch depth.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .types import Sample


@dataclass(frozen=True)
class AugmentConfig:
    cutflip_prob: float = 0.5
    hflip_prob: float = 0.5
    color_jitter_strength: float = 0.1
    crop_size: tuple[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("cutflip_prob", "hflip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if not 0.0 <= self.color_jitter_strength < 1.0:
            raise ValueError("color_jitter_strength must lie in [0, 1)")
        if self.crop_size is not None:
            object.__setattr__(self, "crop_size", tuple(int(v) for v in self.crop_size))


def sample_rng(seed: int, sample_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-sample random stream keyed by (seed, epoch, id), independent of worker layout."""
    return np.random.default_rng([int(seed), int(epoch), zlib.crc32(sample_id.encode())])


def cut_range(h: int) -> tuple[int, int] | None:
    """Inclusive range ``[floor(0.2h), floor(0.8h)]`` of cut rows, or None if degenerate."""
    if h < 5:
        return None
    lo, hi = int(np.floor(0.2 * h)), int(np.floor(0.8 * h))
    if lo < 1 or hi < lo:
        return None
    return lo, hi


def cutflip_at(image: np.ndarray, depth: np.ndarray, cut: int) -> tuple[np.ndarray, np.ndarray]:
    """Move rows ``[cut:]`` to the top and rows ``[:cut]`` to the bottom of both maps."""
    h = image.shape[-2]
    if depth.shape[-2] != h:
        raise ValueError("image and depth heights differ")
    if not 0 <= cut <= h:
        raise ValueError(f"cut row {cut} outside [0, {h}]")
    out_img, out_dep = image.copy(), depth.copy()
    out_img[..., :h - cut, :] = image[..., cut:, :]
    out_img[..., h - cut:, :] = image[..., :cut, :]
    out_dep[..., :h - cut, :] = depth[..., cut:, :]
    out_dep[..., h - cut:, :] = depth[..., :cut, :]
    return out_img, out_dep


def cutflip(image: np.ndarray, depth: np.ndarray, rng: np.random.Generator,
            prob: float = 0.5) -> tuple[np.ndarray, np.ndarray, bool, int | None]:
    """Randomly swap the upper and lower parts of an image/depth pair.

    Returns ``(image, depth, applied, cut_row)``. The draw ``p ~ U(0, 1)``
    keeps the pair unchanged when ``p < 1 - prob`` (``p < 0.5`` at the
    default). The cut row is uniform over ``[floor(0.2h), floor(0.8h)]``
    inclusive. Heights below 5 are never cut.
    """
    p = rng.uniform(0.0, 1.0)
    if p < 1.0 - prob:
        return image, depth, False, None
    rows = cut_range(image.shape[-2])
    if rows is None:
        return image, depth, False, None
    cut = int(rng.integers(rows[0], rows[1], endpoint=True))
    out_img, out_dep = cutflip_at(image, depth, cut)
    return out_img, out_dep, True, cut


def horizontal_flip(image: np.ndarray, depth: np.ndarray, rng: np.random.Generator,
                    prob: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    if rng.uniform(0.0, 1.0) >= prob:
        return image, depth
    return image[..., ::-1].copy(), depth[..., ::-1].copy()


def apply_gains(image: np.ndarray, gains: np.ndarray) -> np.ndarray:
    out = image * np.asarray(gains, dtype=image.dtype).reshape(-1, 1, 1)
    return np.clip(out, 0.0, 1.0)


def color_jitter(image: np.ndarray, rng: np.random.Generator, strength: float = 0.1) -> np.ndarray:
    """Per-channel multiplicative gain in ``[1 - s, 1 + s]``, re-clamped to [0, 1]."""
    gains = rng.uniform(1.0 - strength, 1.0 + strength, size=image.shape[0])
    if strength == 0:
        return image
    return apply_gains(image, gains)


def random_crop(image: np.ndarray, depth: np.ndarray, size: tuple[int, int] | None,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    h, w = image.shape[-2:]
    ch, cw = (h, w) if size is None else size
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w}")
    top = int(rng.integers(0, h - ch, endpoint=True))
    left = int(rng.integers(0, w - cw, endpoint=True))
    return (image[..., top:top + ch, left:left + cw].copy(),
            depth[..., top:top + ch, left:left + cw].copy())


def augment_pipeline(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """crop -> CutFlip -> horizontal flip -> color jitter."""
    image, depth = random_crop(sample.image, sample.gt_depth, cfg.crop_size, rng)
    image, depth, _, _ = cutflip(image, depth, rng, cfg.cutflip_prob)
    image, depth = horizontal_flip(image, depth, rng, cfg.hflip_prob)
    image = color_jitter(image, rng, cfg.color_jitter_strength)
    return replace(sample, image=np.ascontiguousarray(image, dtype=np.float32),
                   gt_depth=np.ascontiguousarray(depth, dtype=np.float32))
