"""
Training objectives on a handful of pixels
==========================================

Supervised scale-invariant loss, uncertainty targets, and the
cross-distillation term, evaluated on tiny hand-made maps.
"""
import math

import torch

from crossdepth.losses import (ssi_loss_single, uncertainty_loss, uncertainty_target, urcd_loss,
                               urcd_terms)

pred = torch.tensor([[[1.0, 2.0]]], dtype=torch.float64)
gt = torch.tensor([[[2.0, 4.0]]], dtype=torch.float64)
mask = torch.ones_like(gt, dtype=torch.bool)

# a prediction off by a constant factor still pays sqrt(1 - eta) of the log error
print("ssi, constant ratio 2:", ssi_loss_single(pred, gt, mask).item())
print("kappa * ln2 * sqrt(0.15) =", 10 * math.log(2) * math.sqrt(0.15))

# uncertainty target grows with relative error and saturates at 1
print("target(1, 2):", uncertainty_target(pred[..., :1], gt[..., :1], mask[..., :1]).item())
for p in (1.0, 1.5, 1.9, 2.0, 4.0, 20.0):
    t = uncertainty_target(torch.tensor([[[p]]]), torch.tensor([[[2.0]]]), torch.tensor([[[True]]]))
    print(f"  pred {p:5.1f} vs gt 2.0 -> {t.item():.4f}")

# cross-distillation: each branch is pulled toward the other, weighted by the other's certainty
d_t = torch.tensor([[[1.0, 3.0]]], requires_grad=True)
d_c = torch.tensor([[[1.5, 2.0]]], requires_grad=True)
u_t = torch.tensor([[[0.1, 0.9]]], requires_grad=True)
u_c = torch.tensor([[[0.8, 0.2]]], requires_grad=True)
term1, term2 = urcd_terms(d_t, d_c, u_t, u_c)
print("term1 (teaches transformer):", term1.item(), " term2 (teaches cnn):", term2.item())

# only the depth maps get gradient; uncertainty maps are frozen weights here
urcd_loss(d_t, d_c, u_t, u_c).backward()
print("grad d_t", d_t.grad.tolist(), "grad d_c", d_c.grad.tolist())
print("grad u_t", u_t.grad, "grad u_c", u_c.grad)

# uncertainty heads regress the target with an L1 loss, summed over both branches
u_pred = torch.tensor([[[0.5, 0.5]]])
tgt = uncertainty_target(pred.float(), gt.float(), mask)
print("L_u:", uncertainty_loss(u_pred, u_pred, tgt, tgt, mask).item())
