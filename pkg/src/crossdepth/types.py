"""Shared value types and depth-range helpers.

Layout convention everywhere: channel-first ``(C, H, W)`` for single
samples, batch-first ``(N, C, H, W)`` for batches. Ground-truth depth uses
``0`` as the only invalid sentinel.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import torch

ArrayLike = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class DepthRange:
    d_min: float = 0.5
    d_max: float = 10.0

    def __post_init__(self):
        if not self.d_min > 0:
            raise ValueError(f"d_min must be > 0, got {self.d_min}")
        if not self.d_max > self.d_min:
            raise ValueError(f"d_max must be > d_min, got {self.d_max} <= {self.d_min}")

    def as_tuple(self) -> tuple[float, float]:
        return (self.d_min, self.d_max)


@dataclass(frozen=True)
class Sample:
    """One training unit: RGB image ``(3, H, W)`` in [0, 1] and depth ``(1, H, W)`` in meters."""

    image: np.ndarray
    gt_depth: np.ndarray
    id: str

    def __post_init__(self):
        check_image(self.image)
        if self.gt_depth.ndim != 3 or self.gt_depth.shape[0] != 1:
            raise ValueError(f"depth must be (1, H, W), got {self.gt_depth.shape}")
        if self.gt_depth.shape[1:] != self.image.shape[1:]:
            raise ValueError(
                f"image {self.image.shape[1:]} and depth {self.gt_depth.shape[1:]} differ in size")
        if not np.all(np.isfinite(self.gt_depth)):
            raise ValueError("non-finite depth")

    @property
    def hw(self) -> tuple[int, int]:
        return self.image.shape[1], self.image.shape[2]


@dataclass
class BranchOutput:
    """Depth ``(N, 1, H, W)`` and uncertainty ``(N, 1, H, W)`` predicted by one branch."""

    depth: torch.Tensor
    uncertainty: torch.Tensor


@dataclass
class DualOutput:
    transformer: BranchOutput
    cnn: BranchOutput


def check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"image must be (3, H, W), got {image.shape}")
    if image.shape[1] < 8 or image.shape[2] < 8:
        raise ValueError(f"image must be at least 8x8, got {image.shape[1:]}")
    if not np.all(np.isfinite(image)):
        raise ValueError("non-finite image values")
    if image.min() < 0 or image.max() > 1:
        raise ValueError("image values must lie in [0, 1]")


def _all_finite(x: ArrayLike) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return bool(np.all(np.isfinite(x)))


def clamp_depth(d: ArrayLike, depth_range: DepthRange) -> ArrayLike:
    """Clamp depth into ``[d_min, d_max]``; works on numpy arrays and tensors."""
    if not _all_finite(d):
        raise ValueError("non-finite depth")
    if isinstance(d, torch.Tensor):
        return d.clamp(depth_range.d_min, depth_range.d_max)
    return np.clip(np.asarray(d), depth_range.d_min, depth_range.d_max)


def valid_mask_of(gt: ArrayLike, depth_range: DepthRange) -> ArrayLike:
    """True where ground truth is positive and inside the evaluation caps (bounds inclusive)."""
    return (gt > 0) & (gt >= depth_range.d_min) & (gt <= depth_range.d_max)
