import pytest
import numpy as np
from pybadbox import BadBox
from pybadbox.settings import Settings
from pybadbox.data.coco_io import dataset_from_dict
from tests.fixtures.sample_datasets import MINIMAL, grid_dataset, write_noise_images


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the desk-scale training experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def settings():
    BadBox().reset()
    settings = Settings(jobs=1, show_progress=False, log_level='CRITICAL')
    BadBox(settings)
    yield settings
    BadBox().reset()


@pytest.fixture
def minimal_dataset():
    return dataset_from_dict(MINIMAL)


@pytest.fixture
def image_dataset(tmp_path):
    """Six 64x64 noise images, two 16 px boxes each, written under tmp_path/src."""
    ds = grid_dataset(num_images=6, per_image=2)
    root = tmp_path / 'src'
    write_noise_images(ds, root, seed=3)
    return ds, root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def shapes(tmp_path_factory):
    """Thirty synthetic shape images, every class present. Returns (dataset, image root)."""
    from pybadbox.bench import SynthConfig, generate_synthetic
    root = tmp_path_factory.mktemp('shapes')
    ds = generate_synthetic(SynthConfig(num_images=30, objects_per_image=(2, 3), seed=11), root, jobs=1)
    return ds, root / 'images'


@pytest.fixture(scope='session')
def quick_config():
    from pybadbox.bench import TrainConfig
    return TrainConfig(epochs=3, hidden=16, hard_negative_rounds=1, seed=5)


@pytest.fixture(scope='session')
def quick_model(shapes, quick_config):
    from pybadbox.bench import train
    ds, root = shapes
    return train(ds, root, quick_config, jobs=1)
