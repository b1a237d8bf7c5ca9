import math

import numpy as np
import pytest
from hypothesis import settings, strategies as st

from hla import KernelConfig, gauss_tokens, w1_batch

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

EXACT = KernelConfig(gamma=1.0, eps=0.0, lam=0.0)


def random_batch(seed, n, d, dv):
    return gauss_tokens(seed, n, d, dv, 1.0 / math.sqrt(d))


@st.composite
def batches(draw, max_n=24, max_d=5, max_dv=4, min_n=1):
    n = draw(st.integers(min_n, max_n))
    d = draw(st.integers(1, max_d))
    dv = draw(st.integers(1, max_dv))
    seed = draw(st.integers(0, 2**63 - 1))
    return random_batch(seed, n, d, dv)


gammas = st.sampled_from([1.0, 0.9, 0.5])


@pytest.fixture
def w1():
    return w1_batch()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
