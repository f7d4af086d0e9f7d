import numpy as np
import pytest

from dampflow.harness import bundled_scenarios


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scenarios():
    return bundled_scenarios()
