"""Training objectives for the two-branch depth model.

All functions take batch-first tensors of shape ``(N, 1, H, W)``; a single
map ``(1, H, W)`` is promoted to a batch of one. Per-image terms are
averaged over pixels first and then over the batch, so the loss weights do
not depend on resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .types import DualOutput

EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 0.5
    kappa: float = 10.0
    eta: float = 0.85
    b: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.b > 0:
            raise ValueError(f"b must be > 0, got {self.b}")


@dataclass
class LossBundle:
    """Named loss terms of one batch.

    ``lambda1``/``lambda2`` are the weights actually used to form ``total``
    (zeroed by ablations), so ``total == ssi + lambda1 * urcd + lambda2 * u``
    always holds for the bundle's own fields.
    """

    ssi: torch.Tensor
    urcd: torch.Tensor
    u: torch.Tensor
    total: torch.Tensor
    lambda1: float
    lambda2: float

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("ssi", "urcd", "u", "total")}


def _batched(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 3:
        return x.unsqueeze(0)
    if x.dim() != 4:
        raise ValueError(f"expected (1, H, W) or (N, 1, H, W), got shape {tuple(x.shape)}")
    return x


def _same_shape(*maps: torch.Tensor) -> None:
    shapes = {tuple(m.shape) for m in maps}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def _masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Per-image mean over masked pixels, then mean over images with any valid pixel."""
    m = mask.to(x.dtype)
    count = m.flatten(1).sum(1)
    keep = count > 0
    if not bool(keep.any()):
        raise ValueError("no valid pixels")
    per_image = (x * m).flatten(1).sum(1)[keep] / count[keep]
    return per_image.mean()


def ssi_loss_single(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor,
                    kappa: float = 10.0, eta: float = 0.85) -> torch.Tensor:
    """Scaled scale-invariant log loss of one branch.

    ``kappa * sqrt(mean(g^2) - eta * mean(g)^2)`` with ``g = ln pred - ln gt``
    over the valid pixels of each image, averaged over the batch. Images
    without valid pixels are skipped; a batch with none raises.
    """
    pred, gt, mask = _batched(pred), _batched(gt), _batched(mask).bool()
    _same_shape(pred, gt, mask)
    if not bool(mask.any()):
        raise ValueError("no valid pixels")
    if bool((pred[mask] <= 0).any()):
        raise ValueError("non-positive predicted depth on valid pixels")
    # off-mask entries are replaced before the log so they cannot produce nan
    g = torch.where(mask, torch.log(torch.where(mask, pred, torch.ones_like(pred)))
                    - torch.log(torch.where(mask, gt, torch.ones_like(gt))),
                    torch.zeros_like(pred))
    m = mask.to(pred.dtype)
    count = m.flatten(1).sum(1)
    keep = count > 0
    g = g.flatten(1)[keep]
    n = count[keep]
    mean_sq = (g * g).sum(1) / n
    sq_mean = g.sum(1) ** 2 / (n * n)
    inner = (mean_sq - eta * sq_mean).clamp_min(0.0)
    return (kappa * torch.sqrt(inner)).mean()


@torch.no_grad()
def uncertainty_target(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor,
                       b: float = 0.2) -> torch.Tensor:
    """Pseudo ground truth for the uncertainty head.

    ``1 - exp(-|pred - gt| / (b * (pred + gt)))`` on valid pixels, 0 elsewhere.
    The result carries no gradient.
    """
    pred, gt, mask = _batched(pred), _batched(gt), _batched(mask).bool()
    _same_shape(pred, gt, mask)
    denom = b * (pred + gt)
    if bool((denom[mask] <= 0).any()):
        raise ValueError("pred + gt must be positive on valid pixels")
    u = 1.0 - torch.exp(-(pred - gt).abs() / denom.clamp_min(EPS))
    return torch.where(mask, u, torch.zeros_like(u)).detach()


def uncertainty_loss(u_t: torch.Tensor, u_c: torch.Tensor, target_t: torch.Tensor,
                     target_c: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """L1 between predicted uncertainty and its target, summed over the two branches."""
    u_t, u_c = _batched(u_t), _batched(u_c)
    target_t, target_c = _batched(target_t).detach(), _batched(target_c).detach()
    mask = _batched(mask).bool()
    _same_shape(u_t, u_c, target_t, target_c, mask)
    return (_masked_mean((u_t - target_t).abs(), mask)
            + _masked_mean((u_c - target_c).abs(), mask))


def urcd_terms(d_t: torch.Tensor, d_c: torch.Tensor, u_t: torch.Tensor, u_c: torch.Tensor,
               mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """The two halves of the cross-distillation loss.

    Term 1 trains the transformer depth toward the (frozen) CNN depth,
    weighted by the frozen CNN certainty; term 2 is the mirror image. Only
    ``d_t`` receives gradient from term 1 and only ``d_c`` from term 2; the
    uncertainty maps are never trained by this loss.

    With ``mask=None`` the mean runs over all pixels, otherwise over the
    masked ones.
    """
    d_t, d_c, u_t, u_c = map(_batched, (d_t, d_c, u_t, u_c))
    _same_shape(d_t, d_c, u_t, u_c)
    term1 = (1.0 - u_c.detach()) * (d_t - d_c.detach()).abs()
    term2 = (1.0 - u_t.detach()) * (d_c - d_t.detach()).abs()
    if mask is None:
        return term1.flatten(1).mean(1).mean(), term2.flatten(1).mean(1).mean()
    mask = _batched(mask).bool()
    _same_shape(d_t, mask)
    return _masked_mean(term1, mask), _masked_mean(term2, mask)


def urcd_loss(d_t: torch.Tensor, d_c: torch.Tensor, u_t: torch.Tensor, u_c: torch.Tensor,
              mask: torch.Tensor | None = None) -> torch.Tensor:
    term1, term2 = urcd_terms(d_t, d_c, u_t, u_c, mask)
    return term1 + term2


def total_loss(out: DualOutput, gt: torch.Tensor, mask: torch.Tensor,
               weights: LossWeights = LossWeights(), *,
               cross_distill: bool = True, uncertainty_rectify: bool = True,
               urcd_on_valid_only: bool = False) -> LossBundle:
    """Combine the supervised, distillation and uncertainty terms.

    ``cross_distill=False`` zeroes both lambdas (two independent supervised
    branches). ``uncertainty_rectify=False`` keeps distillation but with
    unit pixel weights and drops the uncertainty loss.
    """
    t, c = out.transformer, out.cnn
    gt = _batched(gt)
    mask = _batched(mask).bool()
    ssi = (ssi_loss_single(t.depth, gt, mask, weights.kappa, weights.eta)
           + ssi_loss_single(c.depth, gt, mask, weights.kappa, weights.eta))
    zero = ssi.new_zeros(())
    if not cross_distill:
        return LossBundle(ssi=ssi, urcd=zero, u=zero, total=ssi, lambda1=0.0, lambda2=0.0)

    urcd_mask = mask if urcd_on_valid_only else None
    if uncertainty_rectify:
        urcd = urcd_loss(t.depth, c.depth, t.uncertainty, c.uncertainty, urcd_mask)
        target_t = uncertainty_target(t.depth, gt, mask, weights.b)
        target_c = uncertainty_target(c.depth, gt, mask, weights.b)
        u = uncertainty_loss(t.uncertainty, c.uncertainty, target_t, target_c, mask)
        total = ssi + weights.lambda1 * urcd + weights.lambda2 * u
        return LossBundle(ssi=ssi, urcd=urcd, u=u, total=total,
                          lambda1=weights.lambda1, lambda2=weights.lambda2)

    certain = torch.zeros_like(t.depth)
    urcd = urcd_loss(t.depth, c.depth, certain, certain, urcd_mask)
    total = ssi + weights.lambda1 * urcd
    return LossBundle(ssi=ssi, urcd=urcd, u=zero, total=total,
                      lambda1=weights.lambda1, lambda2=0.0)
