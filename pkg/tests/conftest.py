import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message="The TBB threading layer")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
