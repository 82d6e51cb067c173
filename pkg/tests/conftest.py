import numpy as np
import pytest

from mmvnet import kernels
from mmvnet.config import SystemConfig


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # pay the JIT compilation cost before any timed assertion runs
    kernels.warmup()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture()
def small_cfg():
    return SystemConfig(M=16, N=2, T=10, L=3, s_bar=6, s_c=2, snr_db=20.0,
                        L_e=4, L_c=4, seed=7)


def random_phi(rng, t2, m2, scale=None):
    scale = scale if scale is not None else 1.0 / np.sqrt(t2)
    return rng.standard_normal((t2, m2)) * scale
