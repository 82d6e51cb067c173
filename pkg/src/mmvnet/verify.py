"""Self-contained property suites behind the ``verify`` CLI command.

Each suite returns a list of (name, passed, detail) checks; a suite
passes when all of its checks do.  These mirror the invariants the test
suite pins down, packaged so a deployment can re-run them without pytest.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .config import SystemConfig
from .estimator import expected_row_sparsity, fine_forward, init_params
from .bench import analytic_op_count, instrumented_op_count, monte_carlo_union_rows
from .simgen import block_lift, stack_lift
from .thresholding import (bss_threshold, select_support_fsj, select_support_ss,
                           soft_row_threshold, weighted_bss_threshold)
from .training import backward_pass, loss_gradient, mse_loss

SUITES = ("thresholds", "lifting", "sparsity", "gradients", "opcount")


@dataclasses.dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _check(results, name, cond, detail=""):
    results.append(CheckResult(name=name, passed=bool(cond), detail=detail))


def verify_thresholds(trials: int = 200, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    results = []
    ok_reduce = ok_weighted = ok_colinear = ok_nonexp = ok_mono = True
    for _ in range(trials):
        rows, cols = int(rng.integers(2, 20)), int(rng.integers(1, 6))
        v = rng.standard_normal((rows, cols)) * rng.uniform(0.2, 3.0)
        theta = float(rng.uniform(0.0, 2.0))
        sel = select_support_ss(v, float(rng.uniform(0, 1)))
        ones = np.ones(rows)
        a = bss_threshold(v, theta, None)
        b = soft_row_threshold(v, theta)
        ok_reduce &= np.array_equal(a, b)
        c = weighted_bss_threshold(v, theta, ones, sel)
        d = bss_threshold(v, theta, sel)
        ok_weighted &= np.array_equal(c, d)
        norms_in = np.linalg.norm(v, axis=1)
        norms_out = np.linalg.norm(d, axis=1)
        ok_nonexp &= bool(np.all(norms_out <= norms_in * (1 + 1e-12) + 1e-15))
        e = bss_threshold(v, theta + 0.3, sel)
        ok_mono &= bool(np.all(np.linalg.norm(e, axis=1) <= norms_out + 1e-12))
        cross = np.einsum("rc,rc->r", d, v)
        ok_colinear &= bool(np.all(cross >= -1e-12))
    _check(results, "bss-empty-selection-equals-soft", ok_reduce)
    _check(results, "weighted-all-ones-equals-bss", ok_weighted)
    _check(results, "rows-colinear-nonnegative", ok_colinear)
    _check(results, "row-norms-nonexpansive", ok_nonexp)
    _check(results, "monotone-in-theta", ok_mono)
    sel = select_support_fsj(np.diag([0.01, 0.02, 0.05, 1.0, 1.2]), 10)
    _check(results, "fsj-hand-trace", sorted(sel.indices.tolist()) == [3, 4]
           and abs(sel.beta - 0.05) < 1e-15, f"got {sel.indices}, beta {sel.beta}")
    sel0 = select_support_fsj(np.diag([0.0, 0.0, 5.0]), 5)
    _check(results, "fsj-zero-floor", sorted(sel0.indices.tolist()) == [2] and sel0.beta == 0.0)
    return results


def verify_lifting(trials: int = 100, seed: int = 1) -> list:
    rng = np.random.default_rng(seed)
    results = []
    worst = 0.0
    ok_norm = ok_round = True
    for _ in range(trials):
        t, m, c = int(rng.integers(1, 8)), int(rng.integers(1, 8)), int(rng.integers(1, 6))
        phi = rng.standard_normal((t, m)) + 1j * rng.standard_normal((t, m))
        g = rng.standard_normal((m, c)) + 1j * rng.standard_normal((m, c))
        lhs = block_lift(phi) @ stack_lift(g)
        rhs = stack_lift(phi @ g)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        ok_norm &= abs(np.linalg.norm(stack_lift(g)) - np.linalg.norm(g)) < 1e-12
        from .simgen import complex_unlift, real_lift
        ok_round &= np.array_equal(complex_unlift(real_lift(g, "stack")), g)
    _check(results, "block-stack-homomorphism", worst < 1e-12, f"max abs err {worst:.3g}")
    _check(results, "frobenius-preserved", ok_norm)
    _check(results, "unlift-roundtrip", ok_round)
    return results


def verify_sparsity(seed: int = 2) -> list:
    results = []
    rng = np.random.default_rng(seed)
    model = expected_row_sparsity(128, 7, 15, 10)
    _check(results, "expected-rows-128-7", abs(model.expected_rows - 26.7) < 0.1,
           f"expected_rows={model.expected_rows:.3f}")
    # closed form equals the unrolled recursion
    e, a, b = (15 + 10) / 2.0, model.a, model.b
    m = e
    for _ in range(6):
        m = a + b * m
    _check(results, "closed-form-matches-recursion", abs(m - model.expected_rows) < 1e-12)
    # degenerate law: generator matches the model tightly
    model2 = expected_row_sparsity(64, 5, 10, 6)
    mc = monte_carlo_union_rows(64, 5, 10, 6, 20_000, rng, size_range=(8, 8),
                                share_range=(6, 6))
    rel = abs(mc - model2.expected_rows) / model2.expected_rows
    _check(results, "degenerate-law-oracle-1pct", rel < 0.01, f"rel err {rel:.4f}")
    return results


def verify_gradients(points: int = 20, seed: int = 3) -> list:
    results = []
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(M=6, N=2, T=4, L=2, s_bar=4, s_c=1, snr_db=20.0, L_e=2, L_c=2, seed=0)
    worst = 0.0
    checked = 0
    attempts = 0
    while checked < points and attempts < points * 20:
        attempts += 1
        phi = rng.standard_normal((2 * cfg.T, 2 * cfg.M)) / math.sqrt(2 * cfg.T)
        obs = rng.standard_normal((2 * cfg.T, cfg.N))
        coarse, fine = init_params(cfg, phi, lam=0.3, selector="bss")
        fine.omega = 0.6
        prior = rng.random(2 * cfg.M) < 0.3
        truth = rng.standard_normal((2 * cfg.M, cfg.N))

        def loss_and_grads(params):
            out, rec, _ = fine_forward(params, phi, obs, np.zeros((2 * cfg.M, cfg.N)),
                                       prior, record=True)
            grads = backward_pass(rec, loss_gradient(out, truth))
            return mse_loss(out, truth), grads, rec

        base, grads, rec = loss_and_grads(fine)
        if _min_branch_margin(rec) < 1e-3:
            continue
        checked += 1
        eps = 1e-5
        for kind in ("w", "theta", "omega"):
            p = fine.copy()
            if kind == "w":
                l, i, j = rng.integers(fine.n_layers), rng.integers(2 * cfg.M), rng.integers(2 * cfg.T)
                analytic = grads.d_weights[l, i, j]
                p.weights[l, i, j] += eps
                up, _, _ = fine_forward(p, phi, obs, np.zeros((2 * cfg.M, cfg.N)), prior)
                p.weights[l, i, j] -= 2 * eps
                dn, _, _ = fine_forward(p, phi, obs, np.zeros((2 * cfg.M, cfg.N)), prior)
            elif kind == "theta":
                l = rng.integers(fine.n_layers)
                analytic = grads.d_thetas[l]
                p.thetas[l] += eps
                up, _, _ = fine_forward(p, phi, obs, np.zeros((2 * cfg.M, cfg.N)), prior)
                p.thetas[l] -= 2 * eps
                dn, _, _ = fine_forward(p, phi, obs, np.zeros((2 * cfg.M, cfg.N)), prior)
            else:
                analytic = grads.d_omega
                p.omega = fine.omega + eps
                up, _, _ = fine_forward(p, phi, obs, np.zeros((2 * cfg.M, cfg.N)), prior)
                p.omega = fine.omega - eps
                dn, _, _ = fine_forward(p, phi, obs, np.zeros((2 * cfg.M, cfg.N)), prior)
            fd = (mse_loss(up, truth) - mse_loss(dn, truth)) / (2 * eps)
            denom = max(abs(fd), abs(analytic), 1e-10)
            worst = max(worst, abs(fd - analytic) / denom)
    _check(results, "fd-gradient-agreement", checked >= points and worst < 1e-4,
           f"{checked} points, worst rel err {worst:.3g}")
    return results


def _min_branch_margin(record) -> float:
    """Distance of the recorded forward pass from any branch/selection boundary."""
    margin = np.inf
    for rec in record.layers:
        margin = min(margin, float(np.min(np.abs(rec.norms - rec.tau))))
        margin = min(margin, float(np.min(np.abs(rec.norms - rec.theta))))
        srt = np.sort(rec.norms, axis=1)
        if srt.shape[1] > 1:
            margin = min(margin, float(np.min(np.diff(srt))))
    return margin


def verify_opcount(seed: int = 4) -> list:
    results = []
    a = analytic_op_count("coarse", 128, 2, 33)
    b = analytic_op_count("fine", 128, 2, 33)
    _check(results, "coarse-128-2-33", a.total == 68608, f"got {a.total}")
    _check(results, "fine-128-2-33", b.total == 69120, f"got {b.total}")
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(M=16, N=2, T=8, L=2, s_bar=5, s_c=2, snr_db=20.0, L_e=2, L_c=2, seed=0)
    phi = rng.standard_normal((2 * cfg.T, 2 * cfg.M)) / 4.0
    coarse, fine = init_params(cfg, phi, lam=0.1)
    obs = rng.standard_normal((2 * cfg.T, cfg.N))
    got_c, _ = instrumented_op_count("coarse", coarse, phi, obs)
    want_c = analytic_op_count("coarse", cfg.M, cfg.N, cfg.T)
    _check(results, "instrumented-coarse", got_c == want_c, f"got {got_c}")
    init = rng.standard_normal((2 * cfg.M, cfg.N)) * 0.1
    got_f, _ = instrumented_op_count("fine", fine, phi, obs, init=init,
                                     prior_mask=rng.random(2 * cfg.M) < 0.2)
    want_f = analytic_op_count("fine", cfg.M, cfg.N, cfg.T)
    _check(results, "instrumented-fine", got_f == want_f, f"got {got_f}")
    return results


def run_suite(name: str) -> list:
    if name == "thresholds":
        return verify_thresholds()
    if name == "lifting":
        return verify_lifting()
    if name == "sparsity":
        return verify_sparsity()
    if name == "gradients":
        return verify_gradients()
    if name == "opcount":
        return verify_opcount()
    raise ValueError(f"unknown verification suite {name!r}; available: {SUITES}")
