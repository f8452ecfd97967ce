import numpy as np
import pytest

from qatlab.estimator import EstimatorSpec
from qatlab.quantizer import QuantizerConfig


@pytest.fixture
def cfg2bit():
    """The 2-bit reference quantizer: delta=2/3, codes -2..1, range [-4/3, 2/3]."""
    return QuantizerConfig(delta=2.0 / 3.0, l=-2, u=1, bits=2)


@pytest.fixture
def tanh2():
    return EstimatorSpec.tanh_htge(2.0)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(20240811)))
