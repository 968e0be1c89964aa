import numpy as np
import pytest

from cmr_orient.datagen import SplitSpec, generate_pair, make_phantom, split
from cmr_orient.nets import SimpleCnn, SimpleCnnConfig, save_model
from cmr_orient.preprocess import PreprocConfig
from cmr_orient.standardize import Recognizer
from cmr_orient.train import TrainConfig, samples_to_simple_arrays, train_simple

TEST_SIZE = 64  # phantom/network size used by the fast shared fixtures


@pytest.fixture(scope="session")
def preproc_64():
    return PreprocConfig(simple_size=TEST_SIZE)


@pytest.fixture(scope="session")
def phantom_samples():
    rng = np.random.default_rng(7)
    return [generate_pair(*make_phantom(rng, TEST_SIZE), rng) for _ in range(360)]


@pytest.fixture(scope="session")
def trained_simple(phantom_samples, preproc_64):
    """A small CNN trained well enough to drive the tool-level tests."""
    tr, va, _ = split(phantom_samples, SplitSpec(seed=3))
    data = {
        "train": samples_to_simple_arrays(tr, preproc_64),
        "val": samples_to_simple_arrays(va, preproc_64),
    }
    cfg = TrainConfig(epochs=5, batch_size=32, seed=0)
    model = SimpleCnn(SimpleCnnConfig(input_size=TEST_SIZE, seed=0))
    model, metrics = train_simple(cfg, data, model)
    assert metrics.orientation_accuracy >= 0.9
    return model


@pytest.fixture(scope="session")
def recognizer(trained_simple, preproc_64):
    return Recognizer(trained_simple, preproc_64)


@pytest.fixture(scope="session")
def model_ckpt(trained_simple, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "simple.ckpt"
    save_model(trained_simple, path)
    return path
