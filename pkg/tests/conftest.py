import os

# keep test runs from writing longformer.log into the working tree
os.environ.setdefault("LF_LOG_FILE", "")

import numpy as np
import pytest

from longformer_engine.config import ModelConfig
from longformer_engine.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tensor64(rng):
    """Factory for float64 leaf tensors with standard normal entries"""
    def make(*shape, requires_grad=True):
        return Tensor(rng.standard_normal(shape), requires_grad=requires_grad, dtype="float64")
    return make


@pytest.fixture
def tiny_charlm_cfg():
    return ModelConfig(
        architecture="charlm", layers=2, heads=2, d_model=16, max_positions=32,
        half_window=2, dtype="float64",
    )


@pytest.fixture
def tiny_led_cfg():
    return ModelConfig(
        architecture="led", layers=1, heads=2, d_model=16, max_positions=32,
        half_window=2, decoder_layers=1, decoder_max_positions=32, dtype="float64",
    )
