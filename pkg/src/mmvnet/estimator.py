"""Unrolled estimation networks and the iterative baseline they generalize.

The coarse network runs a fixed number of thresholded gradient steps on
the real-lifted multi-frame system and exploits the row sparsity shared
by all frames.  The fine network then refines each frame separately,
reusing the support estimated for the previous frame through a trainable
threshold weight.  With per-layer weights fixed at ``phi.T / q`` and a
constant threshold ``lam / q`` the coarse network reproduces the BCD-MMV
iteration bit for bit, which the test suite asserts.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import kernels
from .config import ConfigError, SystemConfig
from .thresholding import select_fsj_mask, select_ss_mask, selection_fraction

SELECTORS = ("bss", "bfsj", "none")
GRANULARITIES = ("block", "entry")


class NumericError(RuntimeError):
    """A forward pass produced non-finite values."""


class DivergenceError(RuntimeError):
    """The monitored descent objective increased beyond tolerance."""


@dataclasses.dataclass
class CoarseNetParams:
    """Trainable state of the multi-frame (coarse) network."""

    weights: np.ndarray          # (L_e, 2M, 2T)
    thetas: np.ndarray           # (L_e,)
    selector: str = "bss"
    p_min: float = 0.0           # selection bounds, in rows of the lifted channel
    p_max: float = 0.0
    granularity: str = "block"

    def __post_init__(self) -> None:
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.thetas = np.asarray(self.thetas, dtype=np.float64)
        if self.weights.ndim != 3 or self.thetas.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (layers, rows, cols) with one theta per layer")
        if self.selector not in SELECTORS:
            raise ValueError(f"unknown selector {self.selector!r}")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")

    @property
    def n_layers(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "CoarseNetParams":
        return CoarseNetParams(self.weights.copy(), self.thetas.copy(), self.selector,
                               self.p_min, self.p_max, self.granularity)


@dataclasses.dataclass
class FineNetParams:
    """Trainable state of the per-frame (fine) network."""

    weights: np.ndarray          # (L_c, 2M, 2T)
    thetas: np.ndarray           # (L_c,)
    omega: float = 0.5
    selector: str = "bss"
    p_min: float = 0.0
    p_max: float = 0.0
    symmetrize_prior: bool = False

    def __post_init__(self) -> None:
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.thetas = np.asarray(self.thetas, dtype=np.float64)
        if self.weights.ndim != 3 or self.thetas.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (layers, rows, cols) with one theta per layer")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        if self.selector not in SELECTORS:
            raise ValueError(f"unknown selector {self.selector!r}")

    @property
    def n_layers(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "FineNetParams":
        return FineNetParams(self.weights.copy(), self.thetas.copy(), self.omega,
                             self.selector, self.p_min, self.p_max, self.symmetrize_prior)


@dataclasses.dataclass
class SparsityModel:
    """Closed-form expected row occupancy of the concatenated channel."""

    a: float
    b: float
    expected_rows: float   # expected nonzero complex rows after L frames
    lifted_rows: float     # twice that, counting the real-lifted rows


@dataclasses.dataclass
class EstimateResult:
    coarse: np.ndarray
    refined: np.ndarray
    per_frame_supports: list   # per frame: list over batch of lifted row-index arrays
    iterate_trace: list | None = None


@dataclasses.dataclass
class LayerRecord:
    """Forward intermediates of one unrolled layer (granularity space)."""

    v: np.ndarray        # pre-threshold iterate (B, R, C)
    norms: np.ndarray    # (B, R)
    branch: np.ndarray   # (B, R) int8
    keep: np.ndarray     # (B, R) bool
    tau: np.ndarray      # (B, R) effective per-row thresholds
    resid: np.ndarray    # (B, 2T, C0) residual fed to the layer weight
    theta: float


@dataclasses.dataclass
class ComputationRecord:
    """Everything needed to replay / differentiate one recorded forward pass."""

    kind: str                      # "coarse" | "fine"
    layers: list
    phi_l: np.ndarray
    weights: np.ndarray            # (L, 2M, 2T) parameter tensor actually used
    granularity: str
    out: np.ndarray
    row_weights: np.ndarray | None   # (B, 2M) fine-net threshold weights
    prior_mask: np.ndarray | None    # (B, 2M) bool
    block_shape: tuple               # (B, 2M, C)


# ---------------------------------------------------------------------------
# spectral step size
# ---------------------------------------------------------------------------

def largest_eigenvalue(gram: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Dominant eigenvalue of a symmetric PSD matrix by power iteration."""
    gram = np.asarray(gram, dtype=np.float64)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {gram.shape}")
    if not np.all(np.isfinite(gram)):
        raise ValueError("matrix has non-finite entries")
    n = gram.shape[0]
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        lam_new = float(v @ w)
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam = lam_new
    return lam


# ---------------------------------------------------------------------------
# shared layer iterate
# ---------------------------------------------------------------------------

def _promote(a: np.ndarray) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        return a[None], True
    if a.ndim == 3:
        return a, False
    raise ValueError(f"expected a 2-d or 3-d array, got shape {a.shape}")


def _layer_step(g, w_l, theta, phi_l, obs, selector, layer_1b, n_layers, p_min, p_max,
                pilot_len, granularity, row_weights, record_to=None):
    """One unrolled iterate: gradient-style update then block thresholding.

    ``row_weights`` is None for the unweighted nets or a (B, rows) array of
    per-row threshold multipliers.  Returns the thresholded iterate.
    """
    resid = obs - phi_l @ g
    v = g + w_l @ resid
    nb, rows, cols = v.shape
    if granularity == "entry":
        if row_weights is not None:
            raise ValueError("entry granularity does not support row weights")
        v_g = v.reshape(nb, rows * cols, 1)
    else:
        v_g = v
    norms = kernels.row_norms(v_g)
    if selector == "bss":
        frac = selection_fraction(layer_1b, n_layers, p_min, p_max, rows)
        keep = select_ss_mask(norms, frac)
    elif selector == "bfsj":
        keep, _ = select_fsj_mask(norms, pilot_len)
    else:
        keep = np.zeros(norms.shape, dtype=np.bool_)
    theta = float(theta)
    if row_weights is None:
        tau = np.full(norms.shape, theta)
    else:
        tau = theta * row_weights
    out_g, branch = kernels.threshold_forward(v_g, norms, keep, theta, tau)
    out = out_g.reshape(nb, rows, cols) if granularity == "entry" else out_g
    if record_to is not None:
        record_to.append(LayerRecord(v=v_g, norms=norms, branch=branch, keep=keep,
                                     tau=tau, resid=resid, theta=theta))
    return out


def _net_forward(weights, thetas, selector, p_min, p_max, granularity, phi_l, obs,
                 init=None, row_weights=None, n_active=None, record=False, trace=False):
    phi_l = np.asarray(phi_l, dtype=np.float64)
    obs3, squeeze = _promote(obs)
    n_layers = weights.shape[0]
    n_active = n_layers if n_active is None else n_active
    if not 0 <= n_active <= n_layers:
        raise ValueError(f"active layer count {n_active} outside 0..{n_layers}")
    rows = weights.shape[1]
    if phi_l.shape != (weights.shape[2], rows):
        raise ValueError(f"sensing matrix shape {phi_l.shape} does not match weights "
                         f"{weights.shape[1:]}")
    if obs3.shape[1] != phi_l.shape[0]:
        raise ValueError(f"observation rows {obs3.shape[1]} do not match sensing rows "
                         f"{phi_l.shape[0]}")
    pilot_len = phi_l.shape[0] // 2
    nb, _, cols = obs3.shape
    if init is None:
        g = np.zeros((nb, rows, cols))
    else:
        g, sq_i = _promote(init)
        squeeze = squeeze and sq_i
        if g.shape != (nb, rows, cols):
            raise ValueError(f"initial iterate shape {g.shape} does not match "
                             f"({nb}, {rows}, {cols})")
    layer_records = [] if record else None
    iterates = [] if trace else None
    for l in range(n_active):
        g = _layer_step(g, weights[l], thetas[l], phi_l, obs3, selector, l + 1, n_layers,
                        p_min, p_max, pilot_len, granularity, row_weights,
                        record_to=layer_records)
        if trace:
            iterates.append(g)
    if not np.all(np.isfinite(g)):
        raise NumericError("forward pass produced non-finite values")
    rec = None
    if record:
        rec = ComputationRecord(kind="coarse" if row_weights is None else "fine",
                                layers=layer_records, phi_l=phi_l, weights=weights,
                                granularity=granularity, out=g, row_weights=row_weights,
                                prior_mask=None, block_shape=(nb, rows, cols))
    out = g[0] if squeeze else g
    return out, rec, iterates


# ---------------------------------------------------------------------------
# public forward passes
# ---------------------------------------------------------------------------

def coarse_forward(params: CoarseNetParams, phi_l, obs, n_active=None,
                   record=False, trace=False):
    """Run the multi-frame network; returns (estimate, record, iterates)."""
    return _net_forward(params.weights, params.thetas, params.selector, params.p_min,
                        params.p_max, params.granularity, phi_l, obs,
                        n_active=n_active, record=record, trace=trace)


def fine_forward(params: FineNetParams, phi_l, z, init, prior, n_active=None,
                 record=False, trace=False):
    """Refine one frame given the support estimated for the previous frame.

    ``prior`` is an index array or boolean mask over the lifted rows; rows
    in it get the reduced threshold ``theta * omega``.
    """
    z3, _ = _promote(z)
    nb = z3.shape[0]
    rows = params.weights.shape[1]
    prior_mask = _prior_to_mask(prior, nb, rows)
    if params.symmetrize_prior:
        half = rows // 2
        sym = prior_mask.copy()
        sym[:, :half] |= prior_mask[:, half:]
        sym[:, half:] |= prior_mask[:, :half]
        prior_mask = sym
    row_weights = np.where(prior_mask, params.omega, 1.0)
    out, rec, iterates = _net_forward(params.weights, params.thetas, params.selector,
                                      params.p_min, params.p_max, "block", phi_l, z,
                                      init=init, row_weights=row_weights,
                                      n_active=n_active, record=record, trace=trace)
    if rec is not None:
        rec.prior_mask = prior_mask
    return out, rec, iterates


def _prior_to_mask(prior, nb: int, rows: int) -> np.ndarray:
    if prior is None:
        return np.zeros((nb, rows), dtype=np.bool_)
    prior = np.asarray(prior)
    if prior.dtype == np.bool_:
        if prior.ndim == 1:
            prior = prior[None]
        if prior.shape == (1, rows) and nb > 1:
            prior = np.repeat(prior, nb, axis=0)
        if prior.shape != (nb, rows):
            raise ValueError(f"prior mask shape {prior.shape} does not match ({nb}, {rows})")
        return prior
    mask = np.zeros((nb, rows), dtype=np.bool_)
    mask[:, prior.astype(np.int64)] = True
    return mask


def support_mask(est3: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Boolean (batch, rows) mask of rows with norm strictly above ``tol``."""
    est3, _ = _promote(est3)
    return kernels.row_norms(est3) > tol


def extract_support(mat: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Indices of rows of a lifted frame estimate with norm above ``tol``."""
    if tol < 0:
        raise ValueError(f"tolerance must be non-negative, got {tol}")
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {mat.shape}")
    return np.flatnonzero(kernels.row_norms(mat[None])[0] > tol)


def complex_row_support(lifted_mat: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Complex-row support of a stacked-lifted matrix (union of Re/Im halves)."""
    lifted_mat = np.asarray(lifted_mat, dtype=np.float64)
    half = lifted_mat.shape[0] // 2
    norms = kernels.row_norms(lifted_mat[None])[0]
    return np.flatnonzero((norms[:half] > tol) | (norms[half:] > tol))


def two_stage_estimate(coarse: CoarseNetParams, fine: FineNetParams, phi_l, obs,
                       z_frames=None, frame_cols: int | None = None,
                       trace: bool = False) -> EstimateResult:
    """Coarse estimate over all frames, then frame-by-frame refinement.

    Frames are processed strictly in order; the support extracted from the
    refined frame i seeds the threshold weights of frame i+1.  ``obs`` is
    the lifted concatenated observation (optionally batched); per-frame
    observations are sliced from it unless given explicitly.
    """
    obs3, squeeze = _promote(obs)
    coarse_out, _, coarse_trace = coarse_forward(coarse, phi_l, obs3, trace=trace)
    rows = coarse_out.shape[1]
    if z_frames is not None:
        frames = [(_promote(z)[0]) for z in z_frames]
        n_frames = len(frames)
        fc = frames[0].shape[2]
    else:
        if frame_cols is None:
            raise ValueError("need frame_cols when per-frame observations are not given")
        fc = frame_cols
        total = obs3.shape[2]
        if total % fc != 0:
            raise ValueError(f"{total} observation columns do not split into frames of {fc}")
        n_frames = total // fc
        frames = [obs3[:, :, i * fc:(i + 1) * fc] for i in range(n_frames)]
    nb = obs3.shape[0]
    refined = np.empty((nb, rows, n_frames * fc))
    supports = []
    prior = np.zeros((nb, rows), dtype=np.bool_)
    fine_trace = [] if trace else None
    for i in range(n_frames):
        init = coarse_out[:, :, i * fc:(i + 1) * fc]
        if fine.n_layers == 0:
            out = init
        else:
            out, _, tr = fine_forward(fine, phi_l, frames[i], init, prior, trace=trace)
            if trace:
                fine_trace.append(tr)
        refined[:, :, i * fc:(i + 1) * fc] = out
        prior = support_mask(out)
        supports.append([np.flatnonzero(prior[b]) for b in range(nb)])
    trace_out = None
    if trace:
        trace_out = {"coarse": coarse_trace, "fine": fine_trace}
    if squeeze:
        coarse_out, refined = coarse_out[0], refined[0]
    return EstimateResult(coarse=coarse_out, refined=refined,
                          per_frame_supports=supports, iterate_trace=trace_out)


# ---------------------------------------------------------------------------
# iterative baseline
# ---------------------------------------------------------------------------

def l21_objective(phi_l, obs, g, lam: float) -> float:
    """0.5 * ||obs - phi @ g||_F^2 + lam * sum of row norms."""
    phi_l = np.asarray(phi_l, dtype=np.float64)
    g3, _ = _promote(g)
    obs3, _ = _promote(obs)
    resid = obs3 - phi_l @ g3
    return float(0.5 * np.sum(resid * resid) + lam * np.sum(kernels.row_norms(g3)))


def bcd_mmv_solve(phi_l, obs, lam: float, iters: int, unit_step: bool = False,
                  check_objective: bool = False) -> np.ndarray:
    """BCD-MMV / row-thresholded gradient iteration from a zero start.

    The gradient step is scaled by 1/q with q the dominant eigenvalue of
    the sensing Gram, which makes the l2,1 objective non-increasing;
    ``unit_step=True`` drops the scaling for fidelity experiments.  With
    ``check_objective`` the descent property is monitored and a
    :class:`DivergenceError` is raised when it fails.
    """
    if lam <= 0:
        raise ValueError(f"regularization weight must be positive, got {lam}")
    if iters < 1:
        raise ValueError(f"iteration count must be >= 1, got {iters}")
    phi_l = np.asarray(phi_l, dtype=np.float64)
    q = largest_eigenvalue(phi_l.T @ phi_l)
    w = phi_l.T.copy() if unit_step else phi_l.T / q
    theta = lam / q
    weights = np.broadcast_to(w, (iters,) + w.shape)
    thetas = np.full(iters, theta)
    out, _, iterates = _net_forward(weights, thetas, "none", 0.0, 0.0, "block",
                                    phi_l, obs, trace=check_objective)
    if check_objective:
        prev = l21_objective(phi_l, obs, np.zeros_like(iterates[0]), lam)
        for k, g in enumerate(iterates):
            cur = l21_objective(phi_l, obs, g, lam)
            if cur > prev * (1.0 + 1e-9) + 1e-15:
                raise DivergenceError(
                    f"objective increased at iteration {k + 1}: {prev} -> {cur}")
            prev = cur
    return out


# ---------------------------------------------------------------------------
# sparsity model and initialization
# ---------------------------------------------------------------------------

def expected_row_sparsity(M: int, L: int, s_bar: int, s_c: int) -> SparsityModel:
    """Expected number of occupied rows of the L-frame concatenation.

    Models the per-frame support size at its midpoint (s_bar + s_c) / 2 and
    the adjacent-frame overlap at s_c; fresh indices land outside the
    running union with the hypergeometric rate (M - occupied) / (M - size),
    giving a linear recursion with the closed form evaluated here.
    """
    e_size = (s_bar + s_c) / 2.0
    if not s_c < e_size:
        raise ConfigError(f"need s_c < (s_bar + s_c)/2, got s_c={s_c}, s_bar={s_bar}")
    if not e_size < M:
        raise ConfigError(f"expected support size {e_size} must stay below M={M}")
    if L < 1:
        raise ConfigError(f"frame count must be >= 1, got {L}")
    a = (e_size - s_c) * M / (M - e_size)
    b = (M - 2.0 * e_size + s_c) / (M - e_size)
    if L == 1:
        expected = e_size
    elif abs(1.0 - b) < 1e-15:
        expected = e_size + a * (L - 1)
    else:
        bl = b ** (L - 1)
        expected = bl * e_size + a * (1.0 - bl) / (1.0 - b)
    return SparsityModel(a=a, b=b, expected_rows=expected, lifted_rows=2.0 * expected)


def default_lambda(phi_l: np.ndarray, obs_batch: np.ndarray) -> float:
    """Scale-adaptive starting regularization from a calibration batch."""
    phi_l = np.asarray(phi_l, dtype=np.float64)
    obs3, _ = _promote(obs_batch)
    corr = phi_l.T @ obs3
    peak = kernels.row_norms(corr).max(axis=1)
    return 0.1 * float(peak.mean())


def init_params(cfg: SystemConfig, phi_l: np.ndarray, lam: float, selector: str = "bss",
                granularity: str = "block", omega: float = 0.5,
                coarse_layers: int | None = None, fine_layers: int | None = None
                ) -> tuple[CoarseNetParams, FineNetParams]:
    """Untrained parameters mirroring the baseline iteration.

    All layer weights start at ``phi.T / q`` and all thresholds at
    ``lam / q``, so the untrained coarse network with selector "none" is
    the baseline solver.  Selection bounds: the coarse net ramps from s_c
    to the expected occupied-row count of the concatenation; the fine net
    ramps from s_c to s_bar.
    """
    if lam <= 0:
        raise ValueError(f"regularization weight must be positive, got {lam}")
    phi_l = np.asarray(phi_l, dtype=np.float64)
    q = largest_eigenvalue(phi_l.T @ phi_l)
    w0 = phi_l.T / q
    theta0 = lam / q
    n_e = cfg.L_e if coarse_layers is None else coarse_layers
    n_c = cfg.L_c if fine_layers is None else fine_layers
    model = expected_row_sparsity(cfg.M, cfg.L, cfg.s_bar, cfg.s_c)
    coarse = CoarseNetParams(
        weights=np.repeat(w0[None], n_e, axis=0),
        thetas=np.full(n_e, theta0),
        selector=selector,
        p_min=float(cfg.s_c),
        p_max=model.expected_rows,
        granularity=granularity,
    )
    fine = FineNetParams(
        weights=np.repeat(w0[None], n_c, axis=0),
        thetas=np.full(n_c, theta0),
        omega=omega,
        selector=selector,
        p_min=float(cfg.s_c),
        p_max=float(cfg.s_bar),
    )
    return coarse, fine
