import os
import subprocess
import sys

import numpy as np
import pytest

from mmvnet import kernels


def _inputs(rng, shape=(3, 10, 4)):
    v = rng.standard_normal(shape)
    norms = kernels._row_norms_np(v)
    keep = rng.random(norms.shape) < 0.3
    theta = 0.8
    weights = rng.uniform(0.2, 1.0, size=norms.shape)
    tau = theta * weights
    return v, norms, keep, theta, tau, weights


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba backend inactive")
class TestBackendParity:
    def test_row_norms(self, rng):
        v = rng.standard_normal((4, 12, 5))
        assert np.allclose(kernels._row_norms_nb(v), kernels._row_norms_np(v),
                           atol=1e-13)

    def test_forward_parity(self, rng):
        v, norms, keep, theta, tau, _ = _inputs(rng)
        out_a, br_a = kernels._threshold_forward_nb(v, norms, keep, theta, tau)
        out_b, br_b = kernels._threshold_forward_np(v, norms, keep, theta, tau)
        assert np.array_equal(br_a, br_b)
        assert np.allclose(out_a, out_b, atol=1e-13)

    def test_backward_parity(self, rng):
        v, norms, keep, theta, tau, weights = _inputs(rng)
        out, branch = kernels._threshold_forward_np(v, norms, keep, theta, tau)
        grad = rng.standard_normal(v.shape)
        prior = rng.random(norms.shape) < 0.4
        a = kernels._threshold_backward_nb_wrap(v, norms, branch, grad, tau, weights,
                                                prior, theta)
        b = kernels._threshold_backward_np(v, norms, branch, grad, tau, weights,
                                           prior, theta)
        assert np.allclose(a[0], b[0], atol=1e-13)
        assert a[1] == pytest.approx(b[1], rel=1e-12)
        assert a[2] == pytest.approx(b[2], rel=1e-12)


class TestBranchSemantics:
    def test_kept_rows_bit_exact(self, rng):
        v, norms, keep, theta, tau, _ = _inputs(rng)
        out, branch = kernels.threshold_forward(v, norms, keep, theta, tau)
        kept = branch == kernels.BRANCH_KEEP
        assert np.array_equal(out[kept], v[kept])

    def test_zero_branch_is_exact_zero(self, rng):
        v, norms, keep, theta, tau, _ = _inputs(rng)
        out, branch = kernels.threshold_forward(v, norms, keep, theta, tau)
        assert np.all(out[branch == kernels.BRANCH_ZERO] == 0.0)


def test_env_flag_forces_numpy_backend():
    env = dict(os.environ, MMVNET_DISABLE_NUMBA="1")
    code = "from mmvnet import kernels; print(kernels.backend())"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == "numpy"
