import math

import numpy as np
import pytest

from mmvnet.thresholding import (RowMatrix, bss_threshold, select_support_fsj,
                                 select_support_ss, selection_fraction, soft_row_threshold,
                                 weighted_bss_threshold)


def rows_with_norms(norms):
    """Diagonal-style matrix whose j-th row has the requested l2 norm."""
    return np.diag(np.asarray(norms, dtype=np.float64))


def reference_soft(v, tau):
    """Independent straight-line reference for the row shrink operator."""
    out = np.zeros_like(v)
    for j in range(v.shape[0]):
        n = math.sqrt(float(np.sum(v[j] ** 2)))
        if n > tau:
            out[j] = v[j] * (n - tau) / n
    return out


class TestSoftRowThreshold:
    def test_matches_independent_reference(self, rng):
        for _ in range(50):
            v = rng.standard_normal((int(rng.integers(1, 15)), int(rng.integers(1, 5))))
            tau = float(rng.uniform(0, 2))
            assert np.allclose(soft_row_threshold(v, tau), reference_soft(v, tau),
                               atol=1e-12)

    def test_direct_evaluation(self):
        out = soft_row_threshold(np.array([[3.0, 4.0]]), 1.0)
        assert np.allclose(out, [[2.4, 3.2]], atol=1e-12)
        assert math.isclose(np.linalg.norm(out), 4.0, rel_tol=1e-12)

    def test_zero_threshold_is_identity(self):
        v = np.random.default_rng(0).standard_normal((7, 3))
        assert np.array_equal(soft_row_threshold(v, 0.0), v)

    def test_boundary_row_goes_to_zero(self):
        out = soft_row_threshold(np.array([[3.0, 4.0]]), 5.0)
        assert np.all(out == 0.0)

    def test_zero_rows_stay_zero(self):
        v = np.zeros((3, 2))
        assert np.all(soft_row_threshold(v, 0.5) == 0.0)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            soft_row_threshold(np.ones((2, 2)), -0.1)


class TestSelectionFraction:
    def test_endpoints(self):
        assert selection_fraction(1, 8, 10, 27, 128) == 10 / 128
        assert selection_fraction(8, 8, 10, 27, 128) == 27 / 128

    def test_interior_value(self):
        got = selection_fraction(4, 8, 10, 27, 128)
        assert math.isclose(got, (10 + 17 * 3 / 7) / 128, rel_tol=1e-12)

    def test_single_layer(self):
        assert selection_fraction(1, 1, 5, 20, 64) == 5 / 64

    def test_out_of_range_layer(self):
        with pytest.raises(ValueError):
            selection_fraction(0, 4, 1, 2, 8)
        with pytest.raises(ValueError):
            selection_fraction(5, 4, 1, 2, 8)


class TestSelectSupportSS:
    def test_empty_and_full(self):
        v = rows_with_norms([1.0, 2.0, 3.0])
        assert select_support_ss(v, 0.0).indices.size == 0
        assert sorted(select_support_ss(v, 1.0).indices.tolist()) == [0, 1, 2]

    def test_tie_broken_by_index(self):
        v = rows_with_norms([0.1, 0.9, 0.5, 0.9])
        sel = select_support_ss(v, 0.5)
        assert sorted(sel.indices.tolist()) == [1, 3]

    def test_cardinality_exact(self, rng):
        for _ in range(50):
            rows = int(rng.integers(2, 40))
            v = rng.standard_normal((rows, 3))
            p = float(rng.uniform(0, 1))
            sel = select_support_ss(v, p)
            assert sel.indices.size == math.floor(p * rows)

    def test_selected_norms_dominate(self, rng):
        v = rng.standard_normal((20, 4))
        sel = select_support_ss(v, 0.4)
        norms = np.linalg.norm(v, axis=1)
        picked = np.zeros(20, dtype=bool)
        picked[sel.indices] = True
        assert norms[picked].min() >= norms[~picked].max() - 1e-12


class TestSelectSupportFSJ:
    def test_hand_trace(self):
        v = rows_with_norms([0.01, 0.02, 0.05, 1.0, 1.2])
        sel = select_support_fsj(v, 10)
        assert sorted(sel.indices.tolist()) == [3, 4]  # rows 4 and 5, 1-based
        assert sel.beta == 0.05

    def test_zero_floor_trace(self):
        v = rows_with_norms([0.0, 0.0, 5.0])
        sel = select_support_fsj(v, 5)
        assert sorted(sel.indices.tolist()) == [2]
        assert sel.beta == 0.0

    def test_no_jump_selects_nothing(self):
        v = np.ones((6, 2))
        sel = select_support_fsj(v, 10)
        assert sel.indices.size == 0

    def test_separation_invariant(self, rng):
        for _ in range(30):
            v = rng.standard_normal((int(rng.integers(2, 30)), 3))
            sel = select_support_fsj(v, int(rng.integers(1, 20)))
            norms = np.linalg.norm(v, axis=1)
            if sel.indices.size:
                assert norms[sel.indices].min() > sel.beta


class TestBlockThresholds:
    def test_empty_selection_reduces_to_soft(self, rng):
        for _ in range(100):
            v = rng.standard_normal((int(rng.integers(1, 12)), int(rng.integers(1, 5))))
            theta = float(rng.uniform(0, 2))
            assert np.array_equal(bss_threshold(v, theta, None),
                                  soft_row_threshold(v, theta))

    def test_selected_row_kept_verbatim(self):
        v = np.array([[3.0, 4.0]])
        out = bss_threshold(v, 1.0, np.array([0]))
        assert np.array_equal(out, v)

    def test_unselected_row_soft_thresholded(self):
        out = bss_threshold(np.array([[3.0, 4.0]]), 1.0, np.array([], dtype=int))
        assert np.allclose(out, [[2.4, 3.2]], atol=1e-12)

    def test_weighted_all_ones_equals_bss(self, rng):
        for _ in range(100):
            rows = int(rng.integers(1, 12))
            v = rng.standard_normal((rows, 3))
            theta = float(rng.uniform(0, 2))
            sel = select_support_ss(v, float(rng.uniform(0, 1)))
            assert np.array_equal(weighted_bss_threshold(v, theta, np.ones(rows), sel),
                                  bss_threshold(v, theta, sel))

    def test_zero_weight_disables_shrinkage(self):
        v = np.array([[0.3, 0.4]])
        out = weighted_bss_threshold(v, 1.0, np.zeros(1), None)
        assert np.array_equal(out, v)

    def test_weighted_direct_evaluation(self):
        out = weighted_bss_threshold(np.array([[3.0, 4.0]]), 1.0, np.array([0.5]), None)
        assert np.allclose(out, [[2.7, 3.6]], atol=1e-12)

    def test_weight_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            weighted_bss_threshold(np.ones((2, 2)), 1.0, np.array([0.5, 1.5]), None)

    def test_selected_keep_requires_unweighted_theta(self):
        # row norm sits between theta*w and theta: selected rows fall through
        # to the weighted soft branch per the declared branch order
        v = np.array([[0.6, 0.0]])
        out = weighted_bss_threshold(v, 1.0, np.array([0.5]), np.array([0]))
        assert np.allclose(out, [[0.1, 0.0]], atol=1e-14)


class TestOperatorProperties:
    def test_colinearity(self, rng):
        for _ in range(50):
            v = rng.standard_normal((10, 4))
            sel = select_support_ss(v, 0.3)
            out = bss_threshold(v, float(rng.uniform(0, 1.5)), sel)
            n_in = np.linalg.norm(v, axis=1)
            n_out = np.linalg.norm(out, axis=1)
            scale = np.where(n_in > 0, n_out / np.where(n_in > 0, n_in, 1.0), 0.0)
            assert np.allclose(out, v * scale[:, None], atol=1e-12)

    def test_nonexpansive_rows(self, rng):
        for _ in range(50):
            v = rng.standard_normal((10, 4))
            out = bss_threshold(v, 0.7, select_support_ss(v, 0.3))
            assert np.all(np.linalg.norm(out, axis=1)
                          <= np.linalg.norm(v, axis=1) + 1e-12)

    def test_monotone_in_theta(self, rng):
        v = rng.standard_normal((12, 3))
        sel = select_support_ss(v, 0.25)
        thetas = np.sort(rng.uniform(0, 2, size=5))
        norms = [np.linalg.norm(bss_threshold(v, t, sel), axis=1) for t in thetas]
        for a, b in zip(norms, norms[1:]):
            assert np.all(b <= a + 1e-12)

    def test_row_matrix_norm_cache(self, rng):
        m = RowMatrix(rng.standard_normal((6, 3)))
        assert np.allclose(m.row_norms, np.linalg.norm(m.mat, axis=1), atol=1e-12)
