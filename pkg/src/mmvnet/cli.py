"""Command-line entry point: dataset generation, training, evaluation, sweeps.

Exit codes: 0 ok, 2 configuration error, 3 artifact mismatch (dataset /
checkpoint hashes disagree with the config), 4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import bench, dataio, verify
from .bench import SCHEMES, SweepResult, evaluate_scheme, nmse, run_sweep, scheme_mults_per_iter
from .config import ConfigError, RunConfig, config_hash
from .estimator import default_lambda, init_params
from .simgen import gen_dataset
from .training import LossReport, train_pipeline, train_stage, coarse_outputs


class ArtifactMismatch(RuntimeError):
    """A dataset or checkpoint does not match the active configuration."""


def _load_config(path: str) -> RunConfig:
    if path is None:
        raise ConfigError("missing config field: --config")
    return RunConfig.from_file(path)


def _scheme_subset(cfg: RunConfig, schemes_arg: str | None) -> list:
    names = cfg.schemes if not schemes_arg else [s.strip() for s in schemes_arg.split(",") if s.strip()]
    for n in names:
        if n not in SCHEMES:
            raise ConfigError(f"unknown scheme {n!r}; available: {sorted(SCHEMES)}")
    return names


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, seed: int | None, threads: int) -> int:
    sys_cfg = cfg.system
    base_seed = sys_cfg.seed if seed is None else seed
    counts = (cfg.train.train_count, cfg.train.val_count, cfg.train.test_count)
    total = sum(counts)
    ds = gen_dataset(sys_cfg, total, base_seed, threads=max(1, threads))
    splits = {
        "train": [0, counts[0]],
        "val": [counts[0], counts[0] + counts[1]],
        "test": [counts[0] + counts[1], total],
    }
    path = dataio.save_dataset(cfg.dataset_dir, ds, splits)
    print(f"wrote {total} samples to {cfg.dataset_dir} (manifest: {path})")
    return 0


def _open_dataset(cfg: RunConfig) -> dataio.StoredDataset:
    stored = dataio.StoredDataset.open(cfg.dataset_dir)
    if stored.manifest["config_hash"] != config_hash(cfg.system):
        raise ArtifactMismatch(
            f"dataset at {cfg.dataset_dir} was generated from a different system config "
            f"({stored.manifest['config_hash'][:12]} != {config_hash(cfg.system)[:12]})")
    return stored


def _ckpt_prefix(cfg: RunConfig, scheme: str, net: str) -> str:
    return os.path.join(cfg.checkpoint_dir, f"{scheme}.{net}")


def cmd_train(cfg: RunConfig, stage: str, schemes_arg: str | None) -> int:
    stored = _open_dataset(cfg)
    sys_cfg, train_cfg = cfg.system, cfg.train
    train_obs, train_truth = stored.arrays("train")
    val_obs, val_truth = stored.arrays("val")
    phi_l = stored.phi_lifted
    lam = cfg.lam
    if lam is None:
        lam = default_lambda(phi_l, train_obs[: min(64, len(train_obs))])
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    os.makedirs(cfg.output_dir, exist_ok=True)
    meta = {
        "config_hash": config_hash(sys_cfg),
        "phi_sha256": stored.manifest["phi_sha256"],
        "lambda": lam,
    }
    for name in _scheme_subset(cfg, schemes_arg):
        spec = SCHEMES[name]
        if not spec.trainable:
            continue
        if stage == "fine" and not spec.fine:
            print(f"skipping {name}: scheme has no fine stage")
            continue
        if stage == "coarse" and not spec.coarse:
            print(f"skipping {name}: scheme has no coarse stage")
            continue
        depth = sys_cfg.L_e + sys_cfg.L_c if (spec.coarse and not spec.fine) else None
        if stage == "fine" and spec.coarse and spec.fine:
            coarse, ck_meta = dataio.load_net_params(_ckpt_prefix(cfg, name, "coarse"))
            if ck_meta.get("phi_sha256") != meta["phi_sha256"]:
                raise ArtifactMismatch(f"coarse checkpoint for {name} is tied to a "
                                       f"different sensing matrix")
            report = LossReport()
            _, fine = init_params(sys_cfg, phi_l, lam, selector=spec.selector,
                                  omega=1.0 if spec.omega_fixed else 0.5)
            t_init = coarse_outputs(coarse, phi_l, train_obs)
            v_init = coarse_outputs(coarse, phi_l, val_obs)
            train_stage("fine", fine, phi_l, (train_obs, train_truth, t_init),
                        (val_obs, val_truth, v_init), sys_cfg, train_cfg, report,
                        train_omega=not spec.omega_fixed)
        else:
            include_coarse = spec.coarse
            include_fine = spec.fine and stage in ("both", "fine")
            if stage == "coarse":
                include_fine = False
            coarse, fine, report, lam = train_pipeline(
                sys_cfg, train_cfg, phi_l, train_obs, train_truth, val_obs, val_truth,
                selector=spec.selector, granularity=spec.granularity,
                omega_fixed=spec.omega_fixed, include_coarse=include_coarse,
                include_fine=include_fine, lam=lam, coarse_layers=depth)
        if coarse is not None:
            dataio.save_net_params(_ckpt_prefix(cfg, name, "coarse"), coarse, meta)
        if fine is not None and spec.fine:
            dataio.save_net_params(_ckpt_prefix(cfg, name, "fine"), fine, meta)
        report.to_jsonl(os.path.join(cfg.output_dir, f"{name}.train.jsonl"))
        print(f"trained {name}: {len(report.entries)} epochs logged"
              + (f", {len(report.regressions)} regressions" if report.regressions else ""))
    return 0


def _checkpoint_resolver(cfg: RunConfig, stored: dataio.StoredDataset):
    shared = cfg.sweep.shared_checkpoints

    def resolver(scheme: str, axis: str, value):
        spec = SCHEMES[scheme]
        params = {}
        candidates = [f"{scheme}@{axis}={value}"]
        if shared:
            candidates.append(scheme)
        for cand in candidates:
            try:
                loaded = {}
                if spec.coarse:
                    loaded["coarse"], m = dataio.load_net_params(
                        os.path.join(cfg.checkpoint_dir, f"{cand}.coarse"))
                    if shared and cand == scheme and \
                            m.get("phi_sha256") != stored.manifest["phi_sha256"]:
                        raise ArtifactMismatch(f"checkpoint {cand} tied to another pilot")
                if spec.fine:
                    loaded["fine"], _ = dataio.load_net_params(
                        os.path.join(cfg.checkpoint_dir, f"{cand}.fine"))
                params = loaded
                return params
            except FileNotFoundError:
                continue
        return None

    return resolver


def cmd_evaluate(cfg: RunConfig, schemes_arg: str | None, out_dir: str | None,
                 variant: str | None) -> int:
    stored = _open_dataset(cfg)
    sys_cfg = cfg.system
    obs, truth = stored.arrays("test")
    phi_l = stored.phi_lifted
    lam = cfg.lam
    if lam is None:
        lam = default_lambda(phi_l, obs[: min(64, len(obs))])
    variants = (variant,) if variant else bench.NMSE_VARIANTS
    resolver = _checkpoint_resolver(cfg, stored)
    rows, warnings = [], []
    import time
    for name in _scheme_subset(cfg, schemes_arg):
        spec = SCHEMES[name]
        params = resolver(name, "snr", sys_cfg.snr_db) if spec.trainable else {}
        mults = scheme_mults_per_iter(spec, sys_cfg.M, sys_cfg.N, sys_cfg.T,
                                      sys_cfg.L_e, sys_cfg.L_c)
        if spec.trainable and params is None:
            warnings.append(f"no checkpoint for scheme {name}")
            for v in variants:
                rows.append({"axis_value": sys_cfg.snr_db, "scheme": name, "nmse_db": None,
                             "variant": v, "runtime_ms": None, "mults_per_iter": mults,
                             "sample_count": 0, "absent": True})
            continue
        t0 = time.perf_counter()
        est = evaluate_scheme(spec, params, phi_l, obs, sys_cfg, lam)
        ms = (time.perf_counter() - t0) * 1000.0
        for v in variants:
            rep = nmse(est, truth, v)
            rows.append({"axis_value": sys_cfg.snr_db, "scheme": name, "nmse_db": rep.nmse_db,
                         "variant": v, "runtime_ms": ms, "mults_per_iter": mults,
                         "sample_count": rep.sample_count, "absent": False})
    result = SweepResult(axis="snr", values=[sys_cfg.snr_db], rows=rows,
                         config_echo=cfg.to_dict(), warnings=warnings)
    out = out_dir or cfg.output_dir
    _emit_result(result, out, "evaluate", cfg)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_sweep(cfg: RunConfig, schemes_arg: str | None, axis_arg: str | None,
              out_dir: str | None, seed: int | None, variant: str | None) -> int:
    stored = _open_dataset(cfg)
    sweep = cfg.sweep
    axis = axis_arg or sweep.axis
    lam = cfg.lam
    if lam is None:
        obs, _ = stored.arrays("test")
        lam = default_lambda(stored.phi_lifted, obs[: min(64, len(obs))])
    variants = (variant,) if variant else bench.NMSE_VARIANTS
    result = run_sweep(cfg.system, axis, sweep.values, _scheme_subset(cfg, schemes_arg),
                       _checkpoint_resolver(cfg, stored), lam,
                       seed if seed is not None else cfg.system.seed,
                       samples_per_cell=sweep.samples_per_cell, pilot=stored.pilot,
                       variants=variants)
    out = out_dir or cfg.output_dir
    _emit_result(result, out, f"sweep_{axis}", cfg)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _emit_result(result: SweepResult, out_dir: str, stem: str, cfg: RunConfig) -> None:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash(cfg.system)}\n")
        fh.write(",".join(SweepResult.CSV_COLUMNS) + "\n")
        for r in result.rows:
            fh.write(",".join(bench._csv_cell(r[c]) for c in SweepResult.CSV_COLUMNS) + "\n")
    json_path = os.path.join(out_dir, f"{stem}.json")
    result.config_echo = dict(result.config_echo, config_hash=config_hash(cfg.system))
    result.to_json(json_path)
    print(f"wrote {csv_path} and {json_path}")


def cmd_verify(suites: list, out: str | None) -> int:
    report = {}
    all_ok = True
    for suite in suites:
        checks = verify.run_suite(suite)
        ok = all(c.passed for c in checks)
        all_ok &= ok
        report[suite] = {"passed": ok,
                         "checks": [dataclasses.asdict(c) for c in checks]}
        for c in checks:
            status = "PASS" if c.passed else "FAIL"
            detail = f" ({c.detail})" if c.detail and not c.passed else ""
            print(f"[{suite}] {c.name}: {status}{detail}")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1)
    return 0 if all_ok else 4


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmvnet",
                                description="Two-stage unrolled MMV channel estimation")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, config=True):
        if config:
            sp.add_argument("--config", help="path to a JSON run configuration")
        sp.add_argument("--out", help="override the output directory")
        sp.add_argument("--seed", type=int, help="override the base RNG seed")
        sp.add_argument("--threads", type=int, default=1, help="worker cap for generation")

    sp = sub.add_parser("gen-data", help="generate the dataset directory")
    add_common(sp)

    sp = sub.add_parser("train", help="train the configured schemes")
    add_common(sp)
    sp.add_argument("--stage", choices=("coarse", "fine", "both"), default="both")
    sp.add_argument("--schemes", help="comma-separated scheme subset")

    sp = sub.add_parser("evaluate", help="evaluate schemes on the stored test split")
    add_common(sp)
    sp.add_argument("--schemes", help="comma-separated scheme subset")
    sp.add_argument("--nmse-variant", choices=bench.NMSE_VARIANTS, dest="nmse_variant")

    sp = sub.add_parser("sweep", help="sweep an axis and evaluate schemes per point")
    add_common(sp)
    sp.add_argument("--schemes", help="comma-separated scheme subset")
    sp.add_argument("--axis", choices=("snr", "s_c", "T", "S"))
    sp.add_argument("--nmse-variant", choices=bench.NMSE_VARIANTS, dest="nmse_variant")

    sp = sub.add_parser("verify", help="run property verification suites")
    sp.add_argument("suite", choices=verify.SUITES + ("all",))
    sp.add_argument("--out", help="write the JSON report here")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            suites = list(verify.SUITES) if args.suite == "all" else [args.suite]
            return cmd_verify(suites, args.out)
        cfg = _load_config(args.config)
        if getattr(args, "out", None):
            cfg.output_dir = args.out
        if args.command == "gen-data":
            return cmd_gen_data(cfg, args.seed, args.threads)
        if args.command == "train":
            return cmd_train(cfg, args.stage, args.schemes)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.schemes, args.out, args.nmse_variant)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.schemes, args.axis, args.out, args.seed,
                             args.nmse_variant)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ArtifactMismatch as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
