"""
CutFlip on a synthetic scene
============================

Swap the upper and lower parts of an image/depth pair so the network cannot
rely on "lower in the frame means closer". Writes before/after PPM files.
"""
from pathlib import Path

import numpy as np

from crossdepth.augment import AugmentConfig, augment_pipeline, cut_range, cutflip, sample_rng
from crossdepth.data import SceneSpec, generate_scene, write_ppm

out = Path("demo_out/cutflip")
out.mkdir(parents=True, exist_ok=True)

scene = generate_scene(SceneSpec(height=96, width=128, seed=3), sample_id="scene")
print("cut rows allowed for h=96:", cut_range(96))

# prob=1 forces the flip so there is something to look at
image, depth, applied, cut = cutflip(scene.image, scene.gt_depth, np.random.default_rng(0), prob=1.0)
print("applied:", applied, "cut row:", cut)
print("mean depth top/bottom before:", scene.gt_depth[0, :20].mean().round(2), scene.gt_depth[0, -20:].mean().round(2))
print("mean depth top/bottom after: ", depth[0, :20].mean().round(2), depth[0, -20:].mean().round(2))
write_ppm(out / "before.ppm", scene.image)
write_ppm(out / "after.ppm", image)

# the application rate at the default probability
rates = [cutflip(scene.image, scene.gt_depth, np.random.default_rng(i))[2] for i in range(2000)]
print("empirical application rate:", np.mean(rates))

# the full pipeline is a pure function of (seed, epoch, sample id)
cfg = AugmentConfig(seed=7, crop_size=(64, 96))
a = augment_pipeline(scene, cfg, sample_rng(7, scene.id, epoch=2))
b = augment_pipeline(scene, cfg, sample_rng(7, scene.id, epoch=2))
print("pipeline reproducible:", np.array_equal(a.image, b.image), "shape", a.image.shape)
