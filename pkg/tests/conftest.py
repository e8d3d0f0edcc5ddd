# tests/conftest.py
import numpy as np
import pytest

from context_net.core.verification import tiny_network_config
from context_net.data.sample import SegmentationSample
from context_net.data.synth import SynthGenerator
from context_net.utils.config import (
    AugmentConfig,
    DataConfig,
    OptimConfig,
    RunConfig,
    SynthConfig,
)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_network_cfg():
    return tiny_network_config()


@pytest.fixture
def tiny_run_cfg(tmp_path):
    return RunConfig(
        network=tiny_network_config().model_copy(update={"num_classes": 5}),
        optim=OptimConfig(base_lr=0.01, batch_size=2),
        augment=AugmentConfig(crop_size=32),
        data=DataConfig(synth=SynthConfig(canvas=32), train_count=4, val_count=2),
        total_iters=3,
        eval_every=2,
        log_every=1,
        output_dir=str(tmp_path / "run"),
    )


@pytest.fixture
def synth_samples():
    return SynthGenerator(SynthConfig(canvas=32), seed=3).generate(4)


@pytest.fixture
def make_sample():
    """Build a sample whose first image channel encodes its label (label / 10)"""

    def _make(height=20, width=24, num_classes=5, seed=0, sample_id="sample"):
        r = np.random.default_rng(seed)
        labels = r.integers(0, num_classes, size=(height, width)).astype(np.uint8)
        image = np.stack([labels / 10.0, r.uniform(size=(height, width)), r.uniform(size=(height, width))])
        return SegmentationSample(image=image, labels=labels, id=sample_id)

    return _make
