import numpy as np
import pytest

from mmvnet.bench import (NMSE_FLOOR_DB, SCHEMES, UnsupportedCountingError,
                          analytic_op_count, evaluate_scheme, instrumented_op_count,
                          monte_carlo_union_rows, nmse, run_sweep, scheme_mults_per_iter,
                          support_metrics)
from mmvnet.config import SystemConfig
from mmvnet.estimator import default_lambda, expected_row_sparsity, init_params
from mmvnet.simgen import gen_dataset


class TestNmse:
    def test_zero_estimator_is_zero_db(self, rng):
        truth = rng.standard_normal((5, 8, 3))
        for variant in ("paper_unsquared", "squared"):
            assert nmse(np.zeros_like(truth), truth, variant).nmse_db == 0.0

    def test_exact_estimator_hits_floor(self, rng):
        truth = rng.standard_normal((4, 6, 2))
        for variant in ("paper_unsquared", "squared"):
            assert nmse(truth, truth, variant).nmse_db == NMSE_FLOOR_DB

    def test_tenth_relative_error(self):
        truth = np.zeros((1, 4, 1))
        truth[0, 0, 0] = 1.0
        est = truth.copy()
        est[0, 1, 0] = 0.1
        assert nmse(est, truth, "paper_unsquared").nmse_db == pytest.approx(-10.0, abs=1e-9)
        assert nmse(est, truth, "squared").nmse_db == pytest.approx(-20.0, abs=1e-9)

    def test_zero_norm_truth_excluded(self, rng):
        truth = rng.standard_normal((3, 4, 2))
        truth[1] = 0.0
        rep = nmse(np.zeros_like(truth), truth)
        assert rep.excluded == 1
        assert rep.sample_count == 2

    def test_unknown_variant_rejected(self, rng):
        t = rng.standard_normal((2, 2, 2))
        with pytest.raises(ValueError):
            nmse(t, t, "rmse")


class TestSupportMetrics:
    def test_perfect_match(self):
        sup = [[np.array([1, 2])], [np.array([0])]]
        m = support_metrics(sup, sup)
        assert m.precision[0] == 1.0 and m.recall[0] == 1.0
        assert m.exact_match_rate[0] == 1.0

    def test_empty_estimate_conventions(self):
        est = [[np.array([], dtype=int)]]
        true_ne = [[np.array([3])]]
        m = support_metrics(est, true_ne)
        assert m.precision[0] == 0.0 and m.recall[0] == 0.0
        both_empty = support_metrics(est, [[np.array([], dtype=int)]])
        assert both_empty.precision[0] == 1.0 and both_empty.recall[0] == 1.0

    def test_partial_overlap(self):
        m = support_metrics([[np.array([1, 2, 3])]], [[np.array([2, 3, 4])]])
        assert m.precision[0] == pytest.approx(2 / 3)
        assert m.recall[0] == pytest.approx(2 / 3)
        assert m.exact_match_rate[0] == 0.0


class TestOpCounts:
    def test_table_values(self):
        assert analytic_op_count("coarse", 128, 2, 33).total == 68608
        assert analytic_op_count("fine", 128, 2, 33).total == 69120

    def test_unit_dimensions(self):
        assert analytic_op_count("coarse", 1, 1, 1).total == 12
        assert analytic_op_count("fine", 1, 1, 1).total == 16

    def test_breakdown_sums(self):
        c = analytic_op_count("fine", 16, 2, 8)
        assert c.total == c.matmul + c.norms + c.rescale + c.weight_products

    def test_instrumented_matches_analytic(self, small_cfg, rng):
        ds = gen_dataset(small_cfg, 1, base_seed=4)
        phi = ds.phi_lifted
        coarse, fine = init_params(small_cfg, phi, 0.05, selector="bss",
                                   coarse_layers=2, fine_layers=2)
        z = ds.samples[0].per_frame_obs[0].mat
        got, est = instrumented_op_count("coarse", coarse, phi, z)
        assert got == analytic_op_count("coarse", small_cfg.M, small_cfg.N, small_cfg.T)
        init = rng.standard_normal((2 * small_cfg.M, small_cfg.N)) * 0.05
        prior = rng.random(2 * small_cfg.M) < 0.3
        got_f, _ = instrumented_op_count("fine", fine, phi, z, init=init, prior_mask=prior)
        assert got_f == analytic_op_count("fine", small_cfg.M, small_cfg.N, small_cfg.T)
        assert got_f.matmul == 8 * small_cfg.N * small_cfg.M * small_cfg.T

    def test_instrumented_fsj_selector(self, small_cfg):
        ds = gen_dataset(small_cfg, 1, base_seed=5)
        coarse, _ = init_params(small_cfg, ds.phi_lifted, 0.05, selector="bfsj",
                                coarse_layers=1)
        z = ds.samples[0].per_frame_obs[0].mat
        got, _ = instrumented_op_count("coarse", coarse, ds.phi_lifted, z)
        assert got == analytic_op_count("coarse", small_cfg.M, small_cfg.N, small_cfg.T)

    def test_zero_layer_counts_zero(self, small_cfg):
        from mmvnet.estimator import CoarseNetParams
        p = CoarseNetParams(weights=np.zeros((0, 2 * small_cfg.M, 2 * small_cfg.T)),
                            thetas=np.zeros(0))
        got, _ = instrumented_op_count("coarse", p, np.zeros((2 * small_cfg.T,
                                                              2 * small_cfg.M)),
                                       np.zeros((2 * small_cfg.T, small_cfg.N)))
        assert got.total == 0

    def test_entry_granularity_unsupported(self, small_cfg):
        ds = gen_dataset(small_cfg, 1, base_seed=6)
        coarse, _ = init_params(small_cfg, ds.phi_lifted, 0.05, granularity="entry")
        with pytest.raises(UnsupportedCountingError):
            instrumented_op_count("coarse", coarse, ds.phi_lifted,
                                  ds.samples[0].per_frame_obs[0].mat)


class TestMonteCarloUnion:
    def test_single_frame_mean(self, rng):
        got = monte_carlo_union_rows(32, 1, 8, 3, 4000, rng)
        assert abs(got - 6.0) < 0.1  # sizes uniform on {5, 6, 7}

    def test_two_frame_degenerate_growth(self, rng):
        # fixed sizes and overlaps: the union grows by exactly size - shared
        got = monte_carlo_union_rows(64, 2, 8, 5, 4000, rng,
                                     size_range=(6, 6), share_range=(5, 5))
        assert got == pytest.approx(7.0, abs=1e-12)

    def test_oracle_agreement_degenerate(self, rng):
        model = expected_row_sparsity(64, 5, 10, 6)
        got = monte_carlo_union_rows(64, 5, 10, 6, 20_000, rng,
                                     size_range=(8, 8), share_range=(6, 6))
        assert abs(got - model.expected_rows) / model.expected_rows < 0.02


class TestSchemeTable:
    # Flag columns: coarse, fine, prior bound, intra, small-scale, large-scale
    TABLE = {
        "C-F-BSS": (1, 1, 1, 1, 1, 1),
        "C-F-BFSJ": (1, 1, 0, 1, 1, 1),
        "C-F-BSS-WS": (1, 1, 1, 1, 0, 1),
        "C-F-BFSJ-WS": (1, 1, 0, 1, 0, 1),
        "F-BSS-WS": (0, 1, 1, 1, 0, 0),
        "F-BFSJ-WS": (0, 1, 0, 1, 0, 0),
        "BCD-MMV-baseline": (0, 0, 1, 1, 0, 1),
        "LISTA-CPSS-ablation": (1, 0, 1, 0, 0, 0),
        "LISTA-GS-ablation": (1, 0, 0, 1, 0, 0),
    }

    def test_flags_match_static_table(self):
        assert set(SCHEMES) == set(self.TABLE)
        for name, flags in self.TABLE.items():
            s = SCHEMES[name]
            got = (s.coarse, s.fine, s.prior_bound, s.intra, s.small_scale, s.large_scale)
            assert got == tuple(bool(f) for f in flags), name

    def test_ws_variants_pin_omega(self):
        for name, s in SCHEMES.items():
            if s.fine and not s.small_scale:
                assert s.omega_fixed, name
            if s.small_scale:
                assert not s.omega_fixed, name

    def test_mults_per_iter_values(self):
        M, N, T = 128, 2, 33
        assert scheme_mults_per_iter(SCHEMES["BCD-MMV-baseline"], M, N, T, 8, 16) == 68608
        assert scheme_mults_per_iter(SCHEMES["F-BSS-WS"], M, N, T, 8, 16) == 69120
        assert scheme_mults_per_iter(SCHEMES["LISTA-CPSS-ablation"], M, N, T, 8, 16) == 67584
        cf = scheme_mults_per_iter(SCHEMES["C-F-BSS"], M, N, T, 8, 16)
        assert 68608 < cf < 69120


class TestSweep:
    def _setup(self, rng):
        cfg = SystemConfig(M=16, N=2, T=10, L=2, s_bar=6, s_c=2, snr_db=20.0,
                           L_e=2, L_c=2, seed=3)
        ds = gen_dataset(cfg, 8, base_seed=3)
        obs, _ = ds.arrays()
        lam = default_lambda(ds.phi_lifted, obs)
        coarse, fine = init_params(cfg, ds.phi_lifted, lam)
        return cfg, ds, lam, {"coarse": coarse, "fine": fine}

    def test_single_point_equals_direct_evaluation(self, rng):
        cfg, ds, lam, params = self._setup(rng)
        res = run_sweep(cfg, "snr", [cfg.snr_db], ["C-F-BSS", "BCD-MMV-baseline"],
                        lambda *_: params, lam, seed=7, samples_per_cell=6,
                        pilot=ds.pilot)
        assert len(res.rows) == 4  # 2 schemes x 2 variants
        from mmvnet.simgen import gen_sample, sample_seed_for
        import numpy.random as npr
        point_seed = int(npr.SeedSequence([7, 0]).generate_state(1)[0])
        samples = [gen_sample(cfg, ds.pilot, sample_seed_for(point_seed, i))
                   for i in range(6)]
        obs = np.stack([s.lifted_obs.mat for s in samples])
        truth = np.stack([s.lifted_truth.mat for s in samples])
        direct = evaluate_scheme(SCHEMES["C-F-BSS"], params, ds.phi_lifted, obs, cfg, lam)
        want = nmse(direct, truth, "paper_unsquared").nmse_db
        got = [r for r in res.rows if r["scheme"] == "C-F-BSS"
               and r["variant"] == "paper_unsquared"][0]["nmse_db"]
        assert got == pytest.approx(want, abs=1e-12)

    def test_missing_checkpoint_marks_absent(self, rng):
        cfg, ds, lam, params = self._setup(rng)
        res = run_sweep(cfg, "snr", [10.0, 20.0], ["C-F-BSS"], lambda *_: None, lam,
                        seed=7, samples_per_cell=4, pilot=ds.pilot)
        assert all(r["absent"] for r in res.rows)
        assert res.warnings

    def test_csv_layout(self, rng, tmp_path):
        cfg, ds, lam, params = self._setup(rng)
        res = run_sweep(cfg, "snr", [20.0], ["BCD-MMV-baseline"], lambda *_: None, lam,
                        seed=7, samples_per_cell=4, pilot=ds.pilot)
        path = tmp_path / "sweep.csv"
        res.to_csv(str(path))
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == list(res.CSV_COLUMNS)
        assert len(lines) == 1 + len(res.rows)

    def test_snr_trend_for_baseline(self, rng):
        cfg, ds, lam, params = self._setup(rng)
        res = run_sweep(cfg, "snr", [10.0, 30.0], ["BCD-MMV-baseline"], lambda *_: None,
                        lam, seed=7, samples_per_cell=30, pilot=ds.pilot,
                        variants=("paper_unsquared",))
        lo = [r for r in res.rows if r["axis_value"] == 10.0][0]["nmse_db"]
        hi = [r for r in res.rows if r["axis_value"] == 30.0][0]["nmse_db"]
        assert hi <= lo + 0.5

    def test_ablation_and_fine_only_paths(self, rng):
        cfg, ds, lam, params = self._setup(rng)
        obs, truth = ds.arrays()
        for name in ("LISTA-CPSS-ablation", "LISTA-GS-ablation"):
            spec = SCHEMES[name]
            coarse, _ = init_params(cfg, ds.phi_lifted, lam, selector=spec.selector,
                                    granularity=spec.granularity,
                                    coarse_layers=cfg.L_e + cfg.L_c)
            est = evaluate_scheme(spec, {"coarse": coarse}, ds.phi_lifted, obs, cfg, lam)
            assert est.shape == truth.shape
        fine_only = evaluate_scheme(SCHEMES["F-BSS-WS"], {"fine": params["fine"]},
                                    ds.phi_lifted, obs, cfg, lam)
        assert fine_only.shape == truth.shape

    def test_selection_bound_axis_overrides_param(self, rng):
        cfg, ds, lam, params = self._setup(rng)
        res = run_sweep(cfg, "S", [4.0, 12.0], ["C-F-BSS"], lambda *_: params, lam,
                        seed=7, samples_per_cell=4, pilot=ds.pilot,
                        variants=("paper_unsquared",))
        assert len(res.rows) == 2
        assert params["coarse"].p_max != 4.0  # caller's parameters untouched
