import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "mipcam",
    derandomize=True,
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("mipcam")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
