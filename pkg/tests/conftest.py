import os
from argparse import Namespace

import pytest

from dstap.data_provider.dataset_stap import DatasetReader, generate_dataset
from dstap.data_provider.scene_sim import ClutterConfig, ScenarioConfig, TargetRegion, load_scenario
from dstap.radar.geometry import ArrayGeometry, RangeGrid, make_angle_grid

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
REFERENCE_CONFIG = os.path.join(REPO_ROOT, 'configs', 'reference_scenario.json')


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run experiment-scale tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: experiment-scale test, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def small_scenario(**overrides):
    """8-element array, 3 bins, 11 x 11 angle grid: big enough for the CNN, fast to simulate."""
    kwargs = dict(
        array=ArrayGeometry(8, 0.015, 0.03),
        range_grid=RangeGrid(14290.0, 30.0, 3),
        angle_grid=make_angle_grid((20.0, 30.0), (-4.1, -3.9), 1.0, 0.02),
        n_snapshots=20,
        target_region=TargetRegion((0, 2), (20.0, 30.0), (-4.1, -3.9)),
        clutter=ClutterConfig(patches_per_bin=16),
    )
    kwargs.update(overrides)
    return ScenarioConfig(**kwargs).validate()


def train_configs(**overrides):
    configs = Namespace(train_epochs=2, batch_size=8, learning_rate=5e-4, beta1=0.9, beta2=0.999,
                        adam_eps=1e-8, hidden_width=16, seed=3, num_threads=1)
    configs.__dict__.update(overrides)
    return configs


@pytest.fixture(scope='session')
def reference_scenario():
    return load_scenario(REFERENCE_CONFIG)


@pytest.fixture
def scenario():
    return small_scenario()


@pytest.fixture(scope='session')
def tiny_dataset_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp('tiny_dataset'))
    generate_dataset(small_scenario(), master_seed=11, n_examples=40, out_dir=out,
                     workers=1, examples_per_shard=16)
    return out


@pytest.fixture
def tiny_reader(tiny_dataset_dir):
    return DatasetReader(tiny_dataset_dir)
