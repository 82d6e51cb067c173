#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Runs the row-norm / threshold forward / threshold backward kernels and a
full unrolled forward pass on representative shapes and prints per-call
timings for both backends.  The numpy fallback is always importable; the
numba path is skipped when numba is unavailable or disabled via
MMVNET_DISABLE_NUMBA=1.

Usage: python benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from mmvnet import kernels
from mmvnet.config import SystemConfig
from mmvnet.estimator import coarse_forward, init_params


def _time(fn, repeats):
    fn()  # warmup (includes JIT compilation for the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats: int):
    rng = np.random.default_rng(0)
    shapes = [(32, 128, 8), (32, 256, 14), (100, 128, 2)]
    rows = []
    for shape in shapes:
        v = rng.standard_normal(shape)
        norms_np = kernels._row_norms_np(v)
        keep = norms_np > np.median(norms_np)
        theta = float(np.median(norms_np))
        tau = np.full(norms_np.shape, theta)
        weights = np.ones(norms_np.shape)
        out, branch = kernels._threshold_forward_np(v, norms_np, keep, theta, tau)
        grad = rng.standard_normal(shape)

        variants = {"numpy": (kernels._row_norms_np, kernels._threshold_forward_np,
                              kernels._threshold_backward_np)}
        if kernels.NUMBA_AVAILABLE:
            variants["numba"] = (kernels._row_norms_nb, kernels._threshold_forward_nb,
                                 kernels._threshold_backward_nb_wrap)
        for name, (f_norms, f_fwd, f_bwd) in variants.items():
            t_norms = _time(lambda: f_norms(v), repeats)
            t_fwd = _time(lambda: f_fwd(v, norms_np, keep, theta, tau), repeats)
            t_bwd = _time(lambda: f_bwd(v, norms_np, branch, grad, tau, weights, None, theta),
                          repeats)
            rows.append((f"{shape}", name, t_norms * 1e6, t_fwd * 1e6, t_bwd * 1e6))
    print(f"{'shape':>16} {'backend':>8} {'norms us':>10} {'forward us':>11} {'backward us':>12}")
    for r in rows:
        print(f"{r[0]:>16} {r[1]:>8} {r[2]:>10.1f} {r[3]:>11.1f} {r[4]:>12.1f}")
    return rows


def bench_forward(repeats: int):
    cfg = SystemConfig(M=64, N=2, T=20, L=4, s_bar=8, s_c=5, snr_db=30.0,
                       L_e=8, L_c=8, seed=0)
    rng = np.random.default_rng(1)
    phi = rng.standard_normal((2 * cfg.T, 2 * cfg.M)) / np.sqrt(2 * cfg.T)
    coarse, _ = init_params(cfg, phi, lam=0.1, selector="bss")
    obs = rng.standard_normal((32, 2 * cfg.T, cfg.nl))
    t = _time(lambda: coarse_forward(coarse, phi, obs), max(1, repeats // 10))
    print(f"\n8-layer batched coarse forward ({kernels.backend()} backend): {t * 1e3:.2f} ms")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    print(f"active backend: {kernels.backend()}")
    bench_kernels(args.repeats)
    bench_forward(args.repeats)


if __name__ == "__main__":
    main()
