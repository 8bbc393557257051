"""Shared fixtures: one small scenario and one trained toy model.

The scenario is deliberately tiny so the full pipeline stays in the
millisecond range; behavioral thresholds live in test_acceptance.py,
which builds its own full-size runs.
"""

import numpy as np
import pytest

from forgetlab.datasets import ScenarioSpec, build_scenario
from forgetlab.model import ModelSpec, build_model
from forgetlab.training import TrainConfig, train

SMALL_SPEC = ScenarioSpec(kind="ood_foreign", n_train=120, n_test=80,
                          n_unlearn=24, n_reference=40, n_classes=3,
                          input_dim=6, seed=11)


@pytest.fixture(scope="session")
def small_dataset():
    return build_scenario(SMALL_SPEC)


@pytest.fixture(scope="session")
def small_model_spec():
    return ModelSpec(layer_sizes=(6, 12, 3), seed=7)


@pytest.fixture(scope="session")
def small_train_config():
    return TrainConfig(epochs=8, batch_size=16, learning_rate=0.1,
                       optimizer="sgd", shuffle_seed=3)


@pytest.fixture(scope="session")
def small_trained(small_dataset, small_model_spec, small_train_config):
    """Parameters trained on the small scenario's train+unlearn rows."""
    rows = small_dataset.training_indices()
    params = train(build_model(small_model_spec), small_model_spec,
                   small_train_config, small_dataset.X[rows],
                   small_dataset.labels[rows])
    return params


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(99))
