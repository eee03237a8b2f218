import pytest

from simulation.corpus import convert_raw
from simulation.simulator import prepare_corpus
from simulation.synthetic import write_planted_corpus
from tests.helpers import make_config
from tracking.store import RunStore


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
def raw_dir(tmp_path):
    return write_planted_corpus(tmp_path / "raw", train=100, dev=40, test=40, seed=3)


@pytest.fixture
def small_cfg(raw_dir):
    return make_config(raw_dir)


@pytest.fixture
def split(raw_dir, small_cfg):
    return convert_raw(raw_dir, small_cfg)


@pytest.fixture
def prepared(split, small_cfg):
    return prepare_corpus(split, small_cfg)


@pytest.fixture
def store(tmp_path):
    return RunStore(tmp_path / "store")
