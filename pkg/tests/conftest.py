# shared fixtures
import numpy as np
import pytest

from skeattn_utils.config import load_config
from skeattn_utils.skeleton import desk_topology

# small but complete model: 2 blocks, 16 feature channels, 8 heads
SMALL_OVERRIDES = {
    "channels": "8, 16",
    "strides": "1, 2",
    "feature_dim": "16",
    "queue_size": "32",
    "batch_size": "4",
    "epochs": "2",
    "lr_drop_epoch": "1",
    "samples_per_class": "6",
    "test_samples_per_class": "3",
    "knn_interval": "1",
    "linear_epochs": "5",
    "linear_drop_epoch": "3",
    "linear_batch_size": "8",
    "finetune_epochs": "2",
    "progress": "false",
}


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run desk-scale training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs taking minutes")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def topology():
    return desk_topology()


@pytest.fixture
def small_cfg():
    return load_config(preset="desk", overrides=dict(SMALL_OVERRIDES))


@pytest.fixture
def small_cfg64():
    return load_config(preset="desk", overrides={**SMALL_OVERRIDES, "precision": "float64"})


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def unit_rows(rng, rows, dim):
    vectors = rng.normal(size=(rows, dim))
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
