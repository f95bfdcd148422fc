import numpy as np
import pytest
import torch

from unitad.core import ModelConfig


def tiny_config(**overrides):
    """Small model used across unit tests: C_h=8, L=12, K=6, N=4, M=3."""
    params = dict(
        num_classes=3, in_dim=5, hidden_dim=8, d_model=8, num_heads=2, num_decoder_blocks=1,
        pem_dim=4, pem_hidden=8, pem_samples=8, refine_dim=4, num_clips=12,
        num_proposals=6, num_sampled=4, num_real=4, roi_size=8, top_detections=6,
    )
    params.update(overrides)
    return ModelConfig(**params)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
