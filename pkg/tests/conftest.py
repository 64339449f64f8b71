import numpy as np
import pytest

from fractalsea.embedding import ReferenceExtractor
from fractalsea.patchgen import ReferenceGenerator


@pytest.fixture(scope="session")
def small_generator():
    return ReferenceGenerator(patch_size=32)


@pytest.fixture(scope="session")
def extractor():
    return ReferenceExtractor()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
