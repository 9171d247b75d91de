import numpy as np
import pytest

from tmsq import paper_like, synthesize

FS = 50e6
N_FULL = 2**23


@pytest.fixture(scope="session")
def paper_params():
    return paper_like()


@pytest.fixture(scope="session")
def paper_traces(paper_params):
    """Paper-like preset at the default acquisition (50 MS/s, 2**23 samples)."""
    return synthesize(paper_params, FS, N_FULL, seed=11)


@pytest.fixture(scope="session")
def small_traces(paper_params):
    """Short paper-like record for quick structural checks."""
    return synthesize(paper_params, FS, 2**18, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
