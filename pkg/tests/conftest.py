import numpy as np
import pytest
import torch

from crossdepth.models import ModelConfig

# small enough for fast unit tests, same topology as the default
TINY = ModelConfig(channels_t=(8, 16, 16, 32), num_heads=(1, 2, 2, 4), blocks_per_stage=(2, 2, 2, 2),
                   channels_c=(8, 8, 16, 16), decoder_width_t=8, decoder_width_c=8)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t64(x):
    return torch.tensor(x, dtype=torch.float64)
