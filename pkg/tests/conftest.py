import numpy as np
import pytest

from partsdf import shapegen as sg
from partsdf.training import TrainConfig, TrainingSet, train


@pytest.fixture(scope="session")
def tiny_dataset():
    shapes = sg.generate_dataset("barbell", 3, seed=11)
    samples = [sg.sample_sdf(s, 4000, seed=100 + i) for i, s in enumerate(shapes)]
    return TrainingSet(shapes, samples)


@pytest.fixture(scope="session")
def tiny_model(tiny_dataset):
    """A small trained barbell model shared by inference/optimize/cli tests."""
    cfg = TrainConfig(
        epochs=350, batch_size=3, points_per_shape=512, z_dim=16, hidden=32
    )
    params, table, history = train(tiny_dataset, cfg, seed=5)
    return params, table, history


@pytest.fixture(scope="session")
def tiny_model_noconv(tiny_dataset):
    """Same setup without cross-part mixing, for locality and caching tests."""
    cfg = TrainConfig(
        epochs=350, batch_size=3, points_per_shape=512, z_dim=16, hidden=32,
        use_conv=False,
    )
    params, table, history = train(tiny_dataset, cfg, seed=5)
    return params, table, history
