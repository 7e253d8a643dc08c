"""
Evaluation metrics
==================

The twelve standard depth metrics, per image and aggregated.
"""
import numpy as np

from crossdepth.metrics import aggregate, evaluate

rng = np.random.default_rng(0)
gt = rng.uniform(1, 10, (48, 64))
gt[:4] = 0  # missing ground truth is ignored by the default mask

noisy = gt * np.exp(rng.normal(0, 0.1, gt.shape))
scaled = noisy * 1.3

a = evaluate(np.where(gt > 0, noisy, 1.0), gt)
b = evaluate(np.where(gt > 0, scaled, 1.0), gt)
for name, value in a.as_dict().items():
    print(f"{name:12s} {value:10.4f}   x1.3: {b.as_dict()[name]:10.4f}")

# silog ignores a global scale; abs_rel does not
print("silog equal under scaling:", np.isclose(a.silog, b.silog))

# image-averaged vs pixel-weighted aggregation
small = evaluate(np.full((4, 4), 2.0), np.full((4, 4), 1.0))
print("image mean abs_rel:", aggregate([a, small]).abs_rel)
print("pixel weighted abs_rel:", aggregate([a, small], pixel_weighted=True).abs_rel)
