import numpy as np
import pytest

from ccgeo import fields as F


@pytest.fixture(scope="session")
def bases():
    return {name: F.generate_commutators(F.builtin_family(name)) for name in F.BUILTIN_SPECS}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
