import numpy as np
import pytest
from hypothesis import settings

# derandomized: property suites are reproducible run to run
settings.register_profile("repro", derandomize=True, deadline=None, max_examples=60)
settings.load_profile("repro")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
