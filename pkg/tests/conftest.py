import numpy as np
import pytest

from trajdiff.model import DiffusionNet, ModelConfig

TOY = ModelConfig(d_model=8, heads=2, layers=1, ff_dim=16, enc_dim=4, enc_hidden=8,
                  T_init=4, T_pred=3, step_norm=10.0)


@pytest.fixture
def toy_net():
    return DiffusionNet(TOY, rng=np.random.default_rng(0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
