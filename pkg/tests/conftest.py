import numpy as np
import pytest

from wfriction.core import Prng
from wfriction.data import LabeledDataset
from wfriction.nn import mlp_specs, xavier_init


@pytest.fixture
def rng():
    return Prng(1234)


@pytest.fixture
def small_model(rng):
    return xavier_init(mlp_specs(6, [5, 4], 3), rng)


def blobs(n=60, dim=6, classes=3, seed=0, name="blobs"):
    """Separable-ish clusters in [0, 1] for quick training tests."""
    r = Prng(seed)
    centers = r.uniform(0.2, 0.8, size=(classes, dim))
    labels = np.arange(n) % classes
    x = np.clip(centers[labels] + 0.05 * r.normal((n, dim)), 0, 1)
    return LabeledDataset(x, labels, classes, name)


TINY_CONFIG = """\
preset = desk1

[experiment]
seeds = 0, 1
out = {out}

[data]
train_examples = 120
test_examples = 60

[model]
hidden = 8

[optimizer]
mu_grid = 0.5, 2

[schedule]
epochs = 1, 1
"""
