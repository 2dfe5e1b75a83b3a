import numpy as np
import pytest

from uqcat import PhantomSpec, TinySegmenter, TrainConfig, Volume, generate_cohort, train


@pytest.fixture(scope="session")
def small_cohort():
    """Eight 24x24x12 phantoms shared across tests."""
    return generate_cohort(PhantomSpec(dims=(24, 24, 12), seed=7), 8)


@pytest.fixture(scope="session")
def trained_model(small_cohort):
    """Segmenter trained on six subjects; subjects 6-7 are held out."""
    model = TinySegmenter(seed=3)
    history = train(model, small_cohort[:6], TrainConfig(epochs=30, seed=5))
    assert history.train_loss[-1] < history.train_loss[0]
    return model


def make_volume(values, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(np.asarray(values, dtype=np.float32), spacing)
