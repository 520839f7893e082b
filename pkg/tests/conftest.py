import numpy as np
import pytest

from evsm.config import ExperimentConfig
from evsm.dataio import collect, split_dataset


@pytest.fixture(scope="session")
def tiny_config():
    """Small, fast settings shared by module tests (not the acceptance runs)."""
    return ExperimentConfig(steps_per_texture=112, epochs=2, eval_episodes=2,
                            calibration_episodes=2)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_config):
    """8 episodes, 448 records, all four training textures, noise + aug on."""
    return collect(tiny_config.collect_spec(), 56 * 8, seed=11)


@pytest.fixture(scope="session")
def tiny_splits(tiny_dataset):
    return split_dataset(tiny_dataset, seed=11)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
