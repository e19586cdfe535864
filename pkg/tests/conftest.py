import numpy as np
import pytest

from poisonbench.data import Dataset


@pytest.fixture
def line_dataset():
    """Noiseless y = x for d=1; interpolated exactly by OLS."""
    x = np.linspace(0.0, 1.0, 12).reshape(-1, 1)
    return Dataset(x.copy(), x[:, 0].copy())


def make_noisy_dataset(n=50, d=3, noise=0.05, seed=0):
    """Random linear data inside the unit box with Gaussian noise."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, d))
    w = rng.uniform(-0.5, 0.5, size=d)
    y = np.clip(x @ w + 0.4 + rng.normal(0.0, noise, size=n), 0.0, 1.0)
    return Dataset(x, y)
