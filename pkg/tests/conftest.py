import numpy as np
import pytest

from fosl.gridsim import GridScenario, generate_corpus


def random_psd(rng, p, rank=None, ridge=0.0):
    A = rng.standard_normal((p, rank or p))
    return A @ A.T + ridge * np.eye(p)


@pytest.fixture(scope="session")
def small_corpus():
    """Six classes, four scenarios each, two window offsets."""
    return generate_corpus(GridScenario(fo_amplitude=0.01), 4, [0.0, 1.0], 5.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
