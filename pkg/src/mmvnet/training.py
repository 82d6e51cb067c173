"""Layer-wise training through hand-derived reverse-mode differentiation.

The unrolled forward passes record per-layer intermediates; the backward
pass applies analytic derivative rules for every primitive: linear maps
transpose, the radial shrink factor differentiates through the row norm,
and thresholding branch decisions plus selection sets are constants of
the forward pass (the sort is non-differentiable, so selection is a
stop-gradient, matching common unrolled-network practice).

Training runs a progressive schedule: layers are activated one at a time
and all active parameters are optimized jointly by plain mini-batch
gradient descent (optional momentum) with early stopping on validation
loss; the best-validation parameters of each sub-stage are kept.
"""

from __future__ import annotations

import dataclasses
import json
import time

import numpy as np

from . import kernels
from .config import SystemConfig, TrainConfig
from .estimator import (ComputationRecord, CoarseNetParams, FineNetParams, coarse_forward,
                        default_lambda, fine_forward, init_params, support_mask)

THETA_FLOOR = 1e-8


def mse_loss(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared entrywise difference."""
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    diff = estimate - truth
    return float(np.mean(diff * diff))


def loss_gradient(estimate: np.ndarray, truth: np.ndarray, total_entries: int | None = None
                  ) -> np.ndarray:
    """Gradient of the mean-squared loss at the network output."""
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    n = estimate.size if total_entries is None else total_entries
    return 2.0 * (estimate - truth) / n


@dataclasses.dataclass
class GradientSet:
    """Parameter gradients mirroring one network's trainable state."""

    d_weights: np.ndarray   # (L, 2M, 2T)
    d_thetas: np.ndarray    # (L,)
    d_omega: float = 0.0

    @classmethod
    def zeros_like(cls, weights: np.ndarray) -> "GradientSet":
        return cls(d_weights=np.zeros_like(weights),
                   d_thetas=np.zeros(weights.shape[0]), d_omega=0.0)

    def iadd(self, other: "GradientSet") -> "GradientSet":
        self.d_weights += other.d_weights
        self.d_thetas += other.d_thetas
        self.d_omega += other.d_omega
        return self


def backward_pass(record: ComputationRecord, grad_out: np.ndarray) -> GradientSet:
    """Gradients of the loss w.r.t. all parameters of a recorded forward pass.

    ``grad_out`` is the loss gradient at the recorded output, in the block
    shape (batch, rows, cols).  Gradients are reduced over batch and rows
    in fixed index order, so results are deterministic.
    """
    if not record.layers:
        raise ValueError("record holds no layers")
    nb, rows, cols = record.block_shape
    grads = GradientSet.zeros_like(record.weights)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 2:
        g = g[None]
    if g.shape != (nb, rows, cols):
        raise ValueError(f"output gradient shape {g.shape} does not match {(nb, rows, cols)}")
    if record.row_weights is None:
        weight_rows = None
    else:
        weight_rows = record.row_weights
    prior = record.prior_mask
    for l in range(len(record.layers) - 1, -1, -1):
        rec = record.layers[l]
        if record.granularity == "entry":
            g_g = g.reshape(rec.v.shape)
            w_rows = np.ones(rec.norms.shape)
        else:
            g_g = g
            w_rows = weight_rows if weight_rows is not None else np.ones(rec.norms.shape)
        dv_g, dtheta, domega = kernels.threshold_backward(
            rec.v, rec.norms, rec.branch, g_g, rec.tau, w_rows, prior, rec.theta)
        grads.d_thetas[l] += dtheta
        grads.d_omega += domega
        dv = dv_g.reshape(nb, rows, cols) if record.granularity == "entry" else dv_g
        grads.d_weights[l] += np.einsum("bmc,btc->mt", dv, rec.resid)
        w_l = record.weights[l]
        g = dv - record.phi_l.T @ (w_l.T @ dv)
    return grads


def replay_record(record: ComputationRecord) -> np.ndarray:
    """Recompute the recorded output from saved intermediates (bit-exact)."""
    out = None
    for rec in record.layers:
        out, _ = kernels.threshold_forward(rec.v, rec.norms, rec.keep, rec.theta, rec.tau)
    nb, rows, cols = record.block_shape
    return out.reshape(nb, rows, cols) if record.granularity == "entry" else out


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class LossReport:
    entries: list = dataclasses.field(default_factory=list)
    regressions: list = dataclasses.field(default_factory=list)

    def append(self, **kv) -> None:
        self.entries.append(kv)

    def stage_entries(self, stage: str) -> list:
        return [e for e in self.entries if e["stage"] == stage]

    def to_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e) + "\n")
            for r in self.regressions:
                fh.write(json.dumps({"regression": r}) + "\n")


def _fine_chain_forward(params: FineNetParams, phi_l, obs3, init3, frame_cols: int,
                        n_active: int, truth3=None, record=False):
    """Sequential per-frame refinement; priors come from the chain itself
    (or from the true supports when ``truth3`` is passed for ablations)."""
    nb, rows = obs3.shape[0], params.weights.shape[1]
    n_frames = obs3.shape[2] // frame_cols
    prior = np.zeros((nb, rows), dtype=np.bool_)
    outs, records = [], []
    for i in range(n_frames):
        sl = slice(i * frame_cols, (i + 1) * frame_cols)
        out, rec, _ = fine_forward(params, phi_l, obs3[:, :, sl], init3[:, :, sl], prior,
                                   n_active=n_active, record=record)
        outs.append(out)
        records.append(rec)
        if truth3 is not None:
            prior = support_mask(truth3[:, :, sl])
        else:
            prior = support_mask(out)
    return outs, records


def _coarse_batch(params, phi_l, obs, truth, n_active):
    out, rec, _ = coarse_forward(params, phi_l, obs, n_active=n_active, record=True)
    loss = mse_loss(out, truth)
    grads = backward_pass(rec, loss_gradient(out, truth))
    return loss, grads


def _fine_batch(params, phi_l, obs, truth, init, frame_cols, n_active, teacher):
    truth_for_prior = truth if teacher else None
    outs, records = _fine_chain_forward(params, phi_l, obs, init, frame_cols, n_active,
                                        truth3=truth_for_prior, record=True)
    grads = GradientSet.zeros_like(params.weights)
    total = truth.size
    sq = 0.0
    for i, (out, rec) in enumerate(zip(outs, records)):
        sl = slice(i * frame_cols, (i + 1) * frame_cols)
        diff = out - truth[:, :, sl]
        sq += float(np.sum(diff * diff))
        grads.iadd(backward_pass(rec, 2.0 * diff / total))
    return sq / total, grads


def _eval_loss(kind, params, phi_l, obs, truth, init, frame_cols, n_active, batch, teacher):
    total_sq = 0.0
    count = obs.shape[0]
    for start in range(0, count, batch):
        sl = slice(start, min(start + batch, count))
        if kind == "coarse":
            out, _, _ = coarse_forward(params, phi_l, obs[sl], n_active=n_active)
            diff = out - truth[sl]
        else:
            truth_for_prior = truth[sl] if teacher else None
            outs, _ = _fine_chain_forward(params, phi_l, obs[sl], init[sl], frame_cols,
                                          n_active, truth3=truth_for_prior)
            diff = np.concatenate(outs, axis=2) - truth[sl]
        total_sq += float(np.sum(diff * diff))
    return total_sq / truth.size


class _Momentum:
    def __init__(self, params, train_omega: bool):
        self.v_w = np.zeros_like(params.weights)
        self.v_t = np.zeros_like(params.thetas)
        self.v_o = 0.0
        self.train_omega = train_omega

    def apply(self, params, grads: GradientSet, lr: float, mu: float, n_active: int):
        self.v_w[:n_active] = mu * self.v_w[:n_active] + grads.d_weights[:n_active]
        self.v_t[:n_active] = mu * self.v_t[:n_active] + grads.d_thetas[:n_active]
        params.weights[:n_active] -= lr * self.v_w[:n_active]
        params.thetas[:n_active] -= lr * self.v_t[:n_active]
        np.maximum(params.thetas, THETA_FLOOR, out=params.thetas)
        if self.train_omega:
            self.v_o = mu * self.v_o + grads.d_omega
            params.omega = float(np.clip(params.omega - lr * self.v_o, 0.0, 1.0))


def _snapshot(params):
    state = {"weights": params.weights.copy(), "thetas": params.thetas.copy()}
    if hasattr(params, "omega"):
        state["omega"] = params.omega
    return state


def _restore(params, state):
    params.weights[...] = state["weights"]
    params.thetas[...] = state["thetas"]
    if "omega" in state:
        params.omega = state["omega"]


def train_stage(kind: str, params, phi_l, train_data, val_data, sys_cfg: SystemConfig,
                train_cfg: TrainConfig, report: LossReport, train_omega: bool = False):
    """Progressively train one network stage; mutates ``params`` in place.

    ``train_data`` / ``val_data`` are (obs, truth) tuples for the coarse
    stage and (obs, truth, init) for the fine stage.
    """
    if kind not in ("coarse", "fine"):
        raise ValueError(f"unknown stage kind {kind!r}")
    obs, truth = train_data[0], train_data[1]
    init = train_data[2] if kind == "fine" else None
    v_obs, v_truth = val_data[0], val_data[1]
    v_init = val_data[2] if kind == "fine" else None
    frame_cols = sys_cfg.N
    teacher = train_cfg.teacher_prior
    n_layers = params.n_layers
    count = obs.shape[0]
    first_stage_start = None

    for k in range(1, n_layers + 1):
        momentum = _Momentum(params, train_omega and kind == "fine")
        best_val = np.inf
        best_state = _snapshot(params)
        stalls = 0
        if k == 1:
            first_stage_start = _eval_loss(kind, params, phi_l, obs, truth, init, frame_cols,
                                           k, train_cfg.val_batch_size, teacher)
        for epoch in range(1, train_cfg.max_epochs_per_stage + 1):
            t0 = time.perf_counter()
            rng = np.random.default_rng(
                np.random.SeedSequence([train_cfg.seed, 1 if kind == "coarse" else 2, k, epoch]))
            order = rng.permutation(count)
            epoch_sq = 0.0
            for start in range(0, count, train_cfg.batch_size):
                idx = order[start:start + train_cfg.batch_size]
                if kind == "coarse":
                    loss, grads = _coarse_batch(params, phi_l, obs[idx], truth[idx], k)
                else:
                    loss, grads = _fine_batch(params, phi_l, obs[idx], truth[idx], init[idx],
                                              frame_cols, k, teacher)
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite training loss in stage {kind} substage {k} epoch {epoch}")
                momentum.apply(params, grads, train_cfg.learning_rate, train_cfg.momentum, k)
                epoch_sq += loss * len(idx)
            train_mse = epoch_sq / count
            val_mse = _eval_loss(kind, params, phi_l, v_obs, v_truth, v_init, frame_cols,
                                 k, train_cfg.val_batch_size, teacher)
            report.append(stage=kind, substage=k, epoch=epoch, train_mse=train_mse,
                          val_mse=val_mse, seconds=time.perf_counter() - t0)
            if val_mse < best_val:
                best_val = val_mse
                best_state = _snapshot(params)
                stalls = 0
            else:
                stalls += 1
                if stalls >= train_cfg.early_stop_patience:
                    break
        _restore(params, best_state)
        if k == 1:
            end_train = _eval_loss(kind, params, phi_l, obs, truth, init, frame_cols,
                                   k, train_cfg.val_batch_size, teacher)
            if end_train > first_stage_start:
                report.regressions.append(
                    f"{kind} stage: first sub-stage train MSE rose "
                    f"{first_stage_start:.6g} -> {end_train:.6g}")
    return params


def coarse_outputs(params: CoarseNetParams, phi_l, obs, batch: int = 256) -> np.ndarray:
    """Full coarse-network outputs for a sample tensor, evaluated in chunks."""
    outs = []
    for start in range(0, obs.shape[0], batch):
        out, _, _ = coarse_forward(params, phi_l, obs[start:start + batch])
        outs.append(out)
    return np.concatenate(outs, axis=0)


def train_pipeline(sys_cfg: SystemConfig, train_cfg: TrainConfig, phi_l,
                   train_obs, train_truth, val_obs, val_truth, selector: str = "bss",
                   granularity: str = "block", omega_fixed: bool = False,
                   include_coarse: bool = True, include_fine: bool = True,
                   lam: float | None = None, coarse_layers: int | None = None,
                   fine_layers: int | None = None):
    """Train the two stages in order; the coarse stage is frozen afterwards.

    Returns ``(coarse_params, fine_params, report, lam)`` where either
    parameter set is None when the corresponding stage is excluded.
    """
    if lam is None:
        lam = default_lambda(phi_l, train_obs[: min(64, train_obs.shape[0])])
    omega0 = 1.0 if omega_fixed else 0.5
    coarse, fine = init_params(sys_cfg, phi_l, lam, selector=selector,
                               granularity=granularity, omega=omega0,
                               coarse_layers=coarse_layers, fine_layers=fine_layers)
    report = LossReport()
    if include_coarse:
        train_stage("coarse", coarse, phi_l, (train_obs, train_truth), (val_obs, val_truth),
                    sys_cfg, train_cfg, report)
    else:
        coarse = None
    if not include_fine:
        return coarse, None, report, lam
    if coarse is not None:
        train_init = coarse_outputs(coarse, phi_l, train_obs)
        val_init = coarse_outputs(coarse, phi_l, val_obs)
    else:
        train_init = np.zeros_like(train_truth)
        val_init = np.zeros_like(val_truth)
    train_stage("fine", fine, phi_l, (train_obs, train_truth, train_init),
                (val_obs, val_truth, val_init), sys_cfg, train_cfg, report,
                train_omega=not omega_fixed)
    return coarse, fine, report, lam
