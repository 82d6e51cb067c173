import hashlib
import json
import os

import numpy as np
import pytest

from mmvnet import dataio
from mmvnet.cli import main
from mmvnet.estimator import init_params
from mmvnet.simgen import gen_dataset


@pytest.fixture()
def tiny_run(tmp_path):
    cfg = {
        "schema_version": 1,
        "system": {"M": 12, "N": 2, "T": 8, "L": 2, "s_bar": 5, "s_c": 1,
                   "snr_db": 20.0, "L_e": 2, "L_c": 2, "seed": 31},
        "train": {"learning_rate": 0.01, "momentum": 0.9, "batch_size": 8,
                  "val_batch_size": 10, "train_count": 24, "val_count": 10,
                  "test_count": 10, "max_epochs_per_stage": 2,
                  "early_stop_patience": 2, "seed": 2},
        "schemes": ["C-F-BSS", "BCD-MMV-baseline"],
        "paths": {"dataset_dir": str(tmp_path / "data"),
                  "checkpoint_dir": str(tmp_path / "ckpt"),
                  "output_dir": str(tmp_path / "out")},
        "sweep": {"axis": "snr", "values": [10.0, 20.0], "samples_per_cell": 4,
                  "shared_checkpoints": True},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path, cfg, tmp_path


def _file_digests(directory):
    out = {}
    for name in sorted(os.listdir(directory)):
        with open(os.path.join(directory, name), "rb") as fh:
            out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


class TestShippedConfigs:
    def test_full_scale_config_values(self):
        from mmvnet.config import RunConfig
        cfg = RunConfig.from_file(os.path.join(os.path.dirname(__file__), "..",
                                               "configs", "paper_full.json"))
        s, t = cfg.system, cfg.train
        assert (s.M, s.N, s.T, s.L) == (128, 2, 33, 7)
        assert (s.s_bar, s.s_c, s.L_e, s.L_c) == (15, 10, 8, 16)
        assert (t.train_count, t.val_count, t.test_count) == (20000, 5000, 1000)
        assert t.learning_rate == 0.0005
        assert (t.batch_size, t.val_batch_size) == (32, 100)

    def test_desk_config_parses(self):
        from mmvnet.config import RunConfig
        cfg = RunConfig.from_file(os.path.join(os.path.dirname(__file__), "..",
                                               "configs", "paper_desk.json"))
        assert (cfg.system.M, cfg.system.L_e, cfg.system.L_c) == (64, 4, 8)
        assert cfg.train.train_count == 5000


class TestDatasetIO:
    def test_roundtrip_bits(self, small_cfg, tmp_path):
        ds = gen_dataset(small_cfg, 5, base_seed=8)
        dataio.save_dataset(str(tmp_path / "d"), ds, splits={"all": [0, 5]})
        stored = dataio.StoredDataset.open(str(tmp_path / "d"))
        obs, truth = stored.arrays("all")
        want_obs = np.stack([s.lifted_obs.mat for s in ds.samples])
        assert np.array_equal(obs, want_obs)
        assert np.array_equal(stored.phi_lifted, ds.phi_lifted)
        sample = stored.sample(3)
        assert sample.sample_seed == ds.samples[3].sample_seed
        for got, want in zip(sample.supports.supports, ds.samples[3].supports.supports):
            assert np.array_equal(got, want)

    def test_split_ranges(self, small_cfg, tmp_path):
        ds = gen_dataset(small_cfg, 6, base_seed=9)
        dataio.save_dataset(str(tmp_path / "d"), ds,
                            splits={"train": [0, 4], "test": [4, 6]})
        stored = dataio.StoredDataset.open(str(tmp_path / "d"))
        obs, _ = stored.arrays("test")
        assert obs.shape[0] == 2
        with pytest.raises(Exception):
            stored.arrays("val")

    def test_little_endian_layout(self, small_cfg, tmp_path):
        ds = gen_dataset(small_cfg, 1, base_seed=10)
        dataio.save_dataset(str(tmp_path / "d"), ds)
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        assert manifest["dtype"] == "<f8"
        raw = np.fromfile(tmp_path / "d" / "phi.bin", dtype="<f8")
        assert np.array_equal(raw.reshape(manifest["tensors"]["phi"]["shape"]),
                              ds.phi_lifted)


class TestCheckpointIO:
    def test_roundtrip(self, small_cfg, tmp_path, rng):
        ds = gen_dataset(small_cfg, 2, base_seed=11)
        coarse, fine = init_params(small_cfg, ds.phi_lifted, 0.07, selector="bfsj")
        fine.omega = 0.25
        dataio.save_net_params(str(tmp_path / "c"), coarse, {"config_hash": "x"})
        dataio.save_net_params(str(tmp_path / "f"), fine)
        c2, meta = dataio.load_net_params(str(tmp_path / "c"))
        f2, _ = dataio.load_net_params(str(tmp_path / "f"))
        assert np.array_equal(c2.weights, coarse.weights)
        assert np.array_equal(c2.thetas, coarse.thetas)
        assert c2.selector == "bfsj" and meta["config_hash"] == "x"
        assert f2.omega == 0.25


class TestCli:
    def test_gen_data_idempotent(self, tiny_run):
        path, cfg, tmp = tiny_run
        assert main(["gen-data", "--config", str(path)]) == 0
        first = _file_digests(cfg["paths"]["dataset_dir"])
        assert main(["gen-data", "--config", str(path)]) == 0
        assert _file_digests(cfg["paths"]["dataset_dir"]) == first

    def test_full_pipeline(self, tiny_run):
        path, cfg, tmp = tiny_run
        assert main(["gen-data", "--config", str(path)]) == 0
        assert main(["train", "--config", str(path)]) == 0
        ck = cfg["paths"]["checkpoint_dir"]
        assert os.path.exists(os.path.join(ck, "C-F-BSS.coarse.json"))
        assert os.path.exists(os.path.join(ck, "C-F-BSS.fine.bin"))
        assert main(["evaluate", "--config", str(path)]) == 0
        out = cfg["paths"]["output_dir"]
        csv_path = os.path.join(out, "evaluate.csv")
        lines = open(csv_path).read().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1].split(",")[0] == "axis_value"
        assert os.path.exists(os.path.join(out, "C-F-BSS.train.jsonl"))
        assert main(["sweep", "--config", str(path)]) == 0
        sweep_rows = open(os.path.join(out, "sweep_snr.csv")).read().splitlines()
        # comment + header + 2 axis points x 2 schemes x 2 variants
        assert len(sweep_rows) == 2 + 8

    def test_scheme_filter_restricts_columns(self, tiny_run):
        path, cfg, tmp = tiny_run
        assert main(["gen-data", "--config", str(path)]) == 0
        assert main(["evaluate", "--config", str(path),
                     "--schemes", "BCD-MMV-baseline"]) == 0
        rows = open(os.path.join(cfg["paths"]["output_dir"], "evaluate.csv")).read()
        assert "BCD-MMV-baseline" in rows and "C-F-BSS" not in rows

    def test_absent_checkpoint_is_warning_not_error(self, tiny_run, capsys):
        path, cfg, tmp = tiny_run
        assert main(["gen-data", "--config", str(path)]) == 0
        assert main(["evaluate", "--config", str(path)]) == 0  # nothing trained yet
        err = capsys.readouterr().err
        assert "no checkpoint" in err

    def test_missing_config_field_exits_2(self, tmp_path):
        bad = {"schema_version": 1, "system": {"M": 8}}
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(bad))
        assert main(["gen-data", "--config", str(p)]) == 2

    def test_config_mismatch_exits_3(self, tiny_run):
        path, cfg, tmp = tiny_run
        assert main(["gen-data", "--config", str(path)]) == 0
        cfg2 = json.loads(path.read_text())
        cfg2["system"]["s_bar"] = 4
        path.write_text(json.dumps(cfg2))
        assert main(["train", "--config", str(path)]) == 3

    def test_staged_training(self, tiny_run):
        path, cfg, tmp = tiny_run
        assert main(["gen-data", "--config", str(path)]) == 0
        assert main(["train", "--config", str(path), "--stage", "coarse",
                     "--schemes", "C-F-BSS"]) == 0
        ck = cfg["paths"]["checkpoint_dir"]
        assert os.path.exists(os.path.join(ck, "C-F-BSS.coarse.json"))
        assert not os.path.exists(os.path.join(ck, "C-F-BSS.fine.json"))
        assert main(["train", "--config", str(path), "--stage", "fine",
                     "--schemes", "C-F-BSS"]) == 0
        assert os.path.exists(os.path.join(ck, "C-F-BSS.fine.json"))

    def test_ablation_scheme_trains_coarse_only(self, tiny_run):
        path, cfg, tmp = tiny_run
        assert main(["gen-data", "--config", str(path)]) == 0
        assert main(["train", "--config", str(path),
                     "--schemes", "LISTA-GS-ablation"]) == 0
        ck = cfg["paths"]["checkpoint_dir"]
        loaded, meta = dataio.load_net_params(os.path.join(ck, "LISTA-GS-ablation.coarse"))
        assert loaded.n_layers == cfg["system"]["L_e"] + cfg["system"]["L_c"]
        assert loaded.selector == "none"
        assert main(["evaluate", "--config", str(path),
                     "--schemes", "LISTA-GS-ablation"]) == 0

    def test_verify_suites(self, tmp_path):
        report = tmp_path / "verify.json"
        assert main(["verify", "thresholds", "--out", str(report)]) == 0
        doc = json.loads(report.read_text())
        assert doc["thresholds"]["passed"]
        assert main(["verify", "lifting"]) == 0
        assert main(["verify", "opcount"]) == 0
        assert main(["verify", "gradients"]) == 0
