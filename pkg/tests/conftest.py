import sys

import numpy as np
import pytest

from fieldmanifold.synthetic import sinusoid_images
from fieldmanifold.trainer import TrainConfig


def tiny_config(**kw):
    base = dict(batch_size=6, points_per_signal=32, lr=1e-3, steps=20, k_neighbors=3,
                latent_dim=8, trunk_dim=16, trunk_layers=2, rank=2, embed_dim=16,
                hidden_dim=16, n_hidden_layers=2, neighbor_refresh_interval=5, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def tiny_dataset():
    return sinusoid_images(8, size=8, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
