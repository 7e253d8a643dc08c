from .attention import SwinBlock, SwinEncoder, WindowAttention
from .blocks import ConvEncoder, CouplingUnit, Decoder, PredictionHead
from .checkpoint import (CheckpointError, load_dual, load_estimator, read_checkpoint,
                         save_checkpoint, strip_checkpoint)
from .dual import (CNNBranch, DepthEstimator, DualBranchModel, ModelConfig, TransformerBranch,
                   count_parameters)

__all__ = [
    "CNNBranch", "CheckpointError", "ConvEncoder", "CouplingUnit", "Decoder", "DepthEstimator",
    "DualBranchModel", "ModelConfig", "PredictionHead", "SwinBlock", "SwinEncoder",
    "TransformerBranch", "WindowAttention", "count_parameters", "load_dual", "load_estimator",
    "read_checkpoint", "save_checkpoint", "strip_checkpoint",
]
