import numpy as np
import pytest
import structlog

from bgdepth.pipeline.config import TrainConfig
from bgdepth.pipeline.synth import synth_dataset
from bgdepth.tests.common.constants import TINY_BGUNET, TINY_SYNTH


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(
        model=TINY_BGUNET,
        epochs=50,
        max_steps=4,
        batch_size=2,
        optimizer={"lr": 1e-2},
        synth=TINY_SYNTH,
    )


@pytest.fixture
def tiny_samples(tiny_train_config):
    return synth_dataset(tiny_train_config.synth, "train")


@pytest.fixture(autouse=True)
def clear_log_context():
    yield
    structlog.contextvars.clear_contextvars()
