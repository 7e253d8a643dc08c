"""Two-branch monocular depth estimation trained by uncertainty-rectified cross-distillation.

Only the windowed-attention branch is needed at inference time; the
convolutional branch and its coupling units exist for training only.
"""
from .augment import AugmentConfig, augment_pipeline, color_jitter, cutflip, horizontal_flip
from .data import SceneSpec, generate_scene, read_pfm, read_sample, write_pfm, write_sample
from .losses import (LossBundle, LossWeights, ssi_loss_single, total_loss, uncertainty_loss,
                     uncertainty_target, urcd_loss)
from .metrics import MetricReport, aggregate, evaluate
from .models import DepthEstimator, DualBranchModel, ModelConfig, load_estimator
from .train import TrainConfig, Trainer, fit, lr_at, train_step
from .types import BranchOutput, DepthRange, DualOutput, Sample, clamp_depth, valid_mask_of

__version__ = "0.1.0"
