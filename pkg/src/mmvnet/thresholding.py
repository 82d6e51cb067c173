"""Row-wise thresholding operators and support-selection rules.

The block operators act on real matrices whose rows are treated as groups:
a row survives, is shrunk toward zero, or is zeroed, depending on its l2
norm and on whether its index was picked by a support-selection rule.
Two selection rules are provided: top-fraction selection (needs sparsity
bounds) and the `first significant jump' rule (bound-free).

Row/boundary conventions, fixed for determinism:

* a row whose norm equals the active threshold is zeroed;
* sorting ties are broken by ascending row index;
* zero-norm rows map to zero rows without touching the 0/0 direction.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import kernels


@dataclasses.dataclass
class RowMatrix:
    """A real matrix with cached per-row l2 norms."""

    mat: np.ndarray

    def __post_init__(self) -> None:
        self.mat = np.asarray(self.mat, dtype=np.float64)
        if self.mat.ndim != 2:
            raise ValueError(f"expected a 2-d matrix, got shape {self.mat.shape}")
        self._norms: np.ndarray | None = None

    @property
    def row_norms(self) -> np.ndarray:
        if self._norms is None:
            self._norms = kernels.row_norms(self.mat[None])[0]
        return self._norms


@dataclasses.dataclass
class SupportSelection:
    """Outcome of a support-selection rule over the rows of a matrix."""

    indices: np.ndarray
    rule: str  # "ss" | "fsj" | "none"
    beta: float | None = None
    fraction: float | None = None

    def mask(self, rows: int) -> np.ndarray:
        m = np.zeros(rows, dtype=np.bool_)
        m[self.indices] = True
        return m


EMPTY_SELECTION = SupportSelection(indices=np.empty(0, dtype=np.int64), rule="none")


def _as_2d(v) -> np.ndarray:
    if isinstance(v, RowMatrix):
        v = v.mat
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {v.shape}")
    return v


def _as_mask(selection, rows: int) -> np.ndarray:
    if selection is None:
        return np.zeros(rows, dtype=np.bool_)
    if isinstance(selection, SupportSelection):
        return selection.mask(rows)
    sel = np.asarray(selection)
    if sel.dtype == np.bool_:
        if sel.shape != (rows,):
            raise ValueError(f"selection mask has shape {sel.shape}, expected ({rows},)")
        return sel
    mask = np.zeros(rows, dtype=np.bool_)
    mask[sel.astype(np.int64)] = True
    return mask


def soft_row_threshold(v, tau: float) -> np.ndarray:
    """Shrink every row radially by ``tau``; rows with norm <= tau become zero."""
    if tau < 0:
        raise ValueError(f"threshold must be non-negative, got {tau}")
    v = _as_2d(v)
    return bss_threshold(v, tau, None)


def bss_threshold(v, theta: float, selection) -> np.ndarray:
    """Block thresholding with support selection.

    Rows whose index was selected and whose norm exceeds ``theta`` pass
    unattenuated (no shrinkage bias); other rows above the threshold are
    soft-thresholded; the rest are zeroed.  With an empty selection this
    is exactly ``soft_row_threshold``.
    """
    if theta < 0:
        raise ValueError(f"threshold must be non-negative, got {theta}")
    v = _as_2d(v)
    weights = np.ones(v.shape[0], dtype=np.float64)
    return weighted_bss_threshold(v, theta, weights, selection)


def weighted_bss_threshold(v, theta: float, weights, selection) -> np.ndarray:
    """Block thresholding with support selection and per-row threshold weights.

    The effective soft threshold for row j is ``theta * weights[j]``; the
    keep branch for selected rows still compares against the unweighted
    ``theta``.  Branch order: selected-and-above-theta first, then the
    weighted soft branch, then zero.  All weights must lie in [0, 1].
    """
    if theta < 0:
        raise ValueError(f"threshold must be non-negative, got {theta}")
    v = _as_2d(v)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (v.shape[0],):
        raise ValueError(f"weights shape {weights.shape} does not match {v.shape[0]} rows")
    if np.any(weights < 0.0) or np.any(weights > 1.0):
        raise ValueError("row weights must lie in [0, 1]")
    keep = _as_mask(selection, v.shape[0])
    v3 = v[None]
    norms = kernels.row_norms(v3)
    tau = (theta * weights)[None]
    out, _ = kernels.threshold_forward(v3, norms, keep[None], float(theta), tau)
    return out[0]


def selection_fraction(layer: int, n_layers: int, p_min: float, p_max: float, rows: int) -> float:
    """Per-layer selected fraction, ramping linearly from p_min/rows to p_max/rows.

    ``p_min`` and ``p_max`` are row counts; ``layer`` is 1-based.
    For a single-layer network the fraction stays at ``p_min / rows``.
    """
    if not 1 <= layer <= n_layers:
        raise ValueError(f"layer {layer} outside 1..{n_layers}")
    if not 0 <= p_min <= p_max <= rows:
        raise ValueError(f"need 0 <= p_min <= p_max <= rows, got {p_min}, {p_max}, {rows}")
    if n_layers == 1:
        return p_min / rows
    return p_min / rows + (p_max - p_min) * (layer - 1) / (rows * (n_layers - 1))


def select_support_ss(v, fraction: float) -> SupportSelection:
    """Select the floor(fraction * rows) rows with largest l2 norm."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    v = _as_2d(v)
    norms = kernels.row_norms(v[None])[0]
    mask = select_ss_mask(norms[None], fraction)[0]
    return SupportSelection(indices=np.flatnonzero(mask), rule="ss", fraction=fraction)


def select_support_fsj(v, pilot_len: int) -> SupportSelection:
    """Select rows above the boundary found at the first significant norm jump.

    Sorting the row norms ascending, the boundary value beta is the norm
    just below the first gap exceeding ``max_norm / pilot_len``; rows with
    norm strictly above beta are selected.  Without a qualifying gap the
    selection is empty and beta is the largest norm.
    """
    if pilot_len < 1:
        raise ValueError(f"pilot length must be >= 1, got {pilot_len}")
    v = _as_2d(v)
    norms = kernels.row_norms(v[None])[0]
    mask, beta = select_fsj_mask(norms[None], pilot_len)
    return SupportSelection(indices=np.flatnonzero(mask[0]), rule="fsj", beta=float(beta[0]))


# ---------------------------------------------------------------------------
# batched mask helpers used by the unrolled networks
# ---------------------------------------------------------------------------

def select_ss_mask(norms: np.ndarray, fraction: float) -> np.ndarray:
    """Boolean keep masks for batched norms (batch, rows)."""
    nb, nr = norms.shape
    count = int(math.floor(fraction * nr))
    mask = np.zeros((nb, nr), dtype=np.bool_)
    if count <= 0:
        return mask
    order = np.argsort(-norms, axis=1, kind="stable")
    rows = np.arange(nb)[:, None]
    mask[rows, order[:, :count]] = True
    return mask


def select_fsj_mask(norms: np.ndarray, pilot_len: int) -> tuple[np.ndarray, np.ndarray]:
    """First-significant-jump keep masks for batched norms (batch, rows)."""
    nb, nr = norms.shape
    snorms = np.sort(norms, axis=1)
    beta = snorms[:, -1].copy()
    if nr >= 2:
        gaps = np.diff(snorms, axis=1)
        qualifies = gaps > (snorms[:, -1:] / pilot_len)
        has_gap = qualifies.any(axis=1)
        first = np.argmax(qualifies, axis=1)
        beta = np.where(has_gap, snorms[np.arange(nb), first], beta)
    return norms > beta[:, None], beta
