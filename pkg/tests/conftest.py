import numpy as np
import pytest

from sln.dataset import generate_dataset, load_dataset


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    generate_dataset(str(path), n_train=40, n_val=10, seed=77)
    return str(path)


@pytest.fixture(scope="session")
def corpus(corpus_dir):
    """(train scenes, val scenes, percentile table) for a small fixed corpus."""
    return load_dataset(corpus_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
