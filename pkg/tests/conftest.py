import numpy as np
import pytest

from saxtree import BuildConfig
from saxtree.dataset import load_series
from saxtree.evaluation import generate_random_walk, random_walk_series
from saxtree.index import build_index


N = 64
W = 16
TH = 100
COUNT = 3000


@pytest.fixture(scope="session")
def dataset_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "walks.bin"
    generate_random_walk(path, COUNT, N, seed=11)
    return path


@pytest.fixture(scope="session")
def dataset(dataset_path):
    return load_series(dataset_path, N)


@pytest.fixture(scope="session")
def config():
    return BuildConfig(n=N, w=W, b=8, th=TH, rng_seed=0)


@pytest.fixture(scope="session")
def index(dataset_path, config, tmp_path_factory):
    return build_index(dataset_path, config, tmp_path_factory.mktemp("idx"))


@pytest.fixture(scope="session")
def queries():
    return random_walk_series(10, N, seed=4242)
