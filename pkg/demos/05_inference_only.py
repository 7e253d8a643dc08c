"""
Deploying the transformer branch alone
======================================

The CNN branch and coupling units only help during training. A checkpoint
can be stripped to the transformer tensors and still produces the same
predictions.
"""
from pathlib import Path

import numpy as np
import torch

from crossdepth.data import SceneSpec, generate_scene
from crossdepth.models import (DualBranchModel, count_parameters, load_dual, load_estimator,
                               save_checkpoint, strip_checkpoint)

out = Path("demo_out/inference")
model = DualBranchModel(seed=0).eval()
print("parameters  transformer %d  cnn+coupling %d" % (count_parameters(model.transformer),
                                                       count_parameters(model.cnn)))

full = save_checkpoint(out / "full.ckpt", model)
small = strip_checkpoint(full, out / "transformer_only.ckpt")
print("checkpoint bytes  full %d  stripped %d" % (full.stat().st_size, small.stat().st_size))

scene = generate_scene(SceneSpec(seed=5), sample_id="probe")
image = torch.from_numpy(scene.image[None]).float()
with torch.no_grad():
    dual_depth = load_dual(full)[0].eval()(image).transformer.depth
alone_depth = load_estimator(small)(image).depth
print("bit-identical:", torch.equal(dual_depth, alone_depth))
print("depth range of prediction:", float(alone_depth.min()), float(alone_depth.max()))
print("uncertainty map shape:", tuple(load_estimator(small)(image).uncertainty.shape),
      "mean", np.round(float(load_estimator(small)(image).uncertainty.mean()), 3))
