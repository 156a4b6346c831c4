import numpy as np
import pytest

from fogattack.data import SyntheticDatasetSpec, synth_dataset
from fogattack.model import build_cnn
from fogattack.training import TrainConfig, train


@pytest.fixture(scope="session")
def dataset():
    return synth_dataset(SyntheticDatasetSpec(samples_per_class=150, seed=0))


@pytest.fixture(scope="session")
def trained(dataset):
    """Width-8 toy model and its training report."""
    model = build_cnn(width=8, seed=3)
    report = train(model, dataset, TrainConfig(seed=3))
    return model, report


@pytest.fixture(scope="session")
def trained_wide(dataset):
    model = build_cnn(width=16, seed=2)
    train(model, dataset, TrainConfig(seed=2))
    return model


@pytest.fixture(scope="session")
def small_model():
    """Untrained model small enough for dense finite-difference checks."""
    return build_cnn(input_shape=(16, 16, 3), n_classes=4, width=4, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

