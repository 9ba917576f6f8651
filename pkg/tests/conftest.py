import numpy as np
import pytest

from adds import NoiseSchedule, build_linear_schedule, make_gmm_task


@pytest.fixture
def two_step():
    """betas [0.1, 0.2]: alpha_bars [0.9, 0.72]."""
    return NoiseSchedule.from_betas([0.1, 0.2])


@pytest.fixture
def const_08():
    return NoiseSchedule.from_alphas([0.8] * 6)


@pytest.fixture(scope="session")
def linear1000():
    return build_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture(scope="session")
def task():
    return make_gmm_task(3, 2, 1.2, 0.5, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
