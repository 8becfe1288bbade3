import numpy as np
import pytest

from cafct import CAFCT, EncoderConfig, ModelConfig
from cafct.numerics.tensor import Tensor, no_grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_encoder():
    return EncoderConfig(input_size=16, base_channels=4, patch_size=2, transformer_depth=1, heads=2)


@pytest.fixture
def tiny_model(tiny_encoder):
    return CAFCT(ModelConfig(encoder=tiny_encoder, se_ratio=2, aspp_rates=(1, 2, 3)), seed=3)


def warm_up(model, rng, batch=4, steps=3):
    """Populate batch-norm running statistics with a few train-mode forwards."""
    size = model.config.encoder.input_size
    model.train()
    with no_grad():
        for _ in range(steps):
            model(Tensor(rng.random((batch, 1, size, size))))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_acceptance(name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
