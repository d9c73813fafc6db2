import numpy as np
import pytest

from masklab.data import Dataset, synthetic_blobs, split
from masklab.defenses import DiffRound, HardQuantize, Invert
from masklab.nn import AdvTrainConfig, TrainConfig, init_mlp, train

ARCH = [64, 32, 3]
TRAIN_EPS = 0.2


@pytest.fixture(scope="session")
def blobs():
    ds = synthetic_blobs(seed=7, n_per_class=120, d=64, n_classes=3,
                         separation=2.5, noise=0.05)
    return split(ds, 0.7, 0)


def fit_classifier(train_ds, preprocessor=None, adversarial=None, seed=0, epochs=30):
    """Train an MLP on (optionally preprocessed) training inputs."""
    xs = train_ds.inputs
    if preprocessor is not None:
        xs = np.clip(preprocessor.forward_np(xs), 0.0, 1.0)
    ds = Dataset(xs, train_ds.labels, train_ds.n_classes)
    model = init_mlp(ARCH, seed)
    cfg = TrainConfig(epochs=epochs, batch_size=32, learning_rate=0.1,
                      seed=seed, adversarial=adversarial)
    model, _ = train(model, ds, cfg)
    return model


@pytest.fixture(scope="session")
def std_model(blobs):
    return fit_classifier(blobs[0])


@pytest.fixture(scope="session")
def adv_model(blobs):
    return fit_classifier(blobs[0], adversarial=AdvTrainConfig(eps=TRAIN_EPS, steps=7))


@pytest.fixture(scope="session")
def invert_model(blobs):
    return fit_classifier(blobs[0], preprocessor=Invert())


@pytest.fixture(scope="session")
def diffround_model(blobs):
    return fit_classifier(blobs[0], preprocessor=DiffRound(1, 0.01))


@pytest.fixture(scope="session")
def quantize_model(blobs):
    return fit_classifier(blobs[0], preprocessor=HardQuantize(8))
