import json
import math

import numpy as np
import pytest
from scipy.integrate import quad as scipy_quad
from scipy.stats import t as student_t

from vbmc.benchmark import (
    BenchmarkRecord,
    RunConfig,
    execute_run,
    make_cigar,
    make_lumpy,
    make_problem,
    make_student,
    metric_gskl,
    metric_lml_error,
    run_benchmark,
    summarize_records,
    verify_ground_truth,
    write_long_csv,
    write_summary_csv,
)
from vbmc.variational import gaussian_skl


class TestLumpy:
    def test_component_count_and_weights(self):
        p = make_lumpy(3, 0)
        assert p.params["mu"].shape == (12, 3)
        assert p.params["w"].sum() == pytest.approx(1.0)
        assert np.all(p.params["sd"] >= 0.2) and np.all(p.params["sd"] <= 0.6)

    def test_lml_matches_grid(self):
        p = make_lumpy(2, 0)
        report = verify_ground_truth(p)
        assert report["lml"] == pytest.approx(p.lml_true, abs=1e-4)

    def test_posterior_mean_matches_grid(self):
        p = make_lumpy(2, 3)
        report = verify_ground_truth(p)
        assert np.allclose(report["mean"], p.post_mean, atol=1e-4)

    def test_prior_scaled_to_mixture_spread(self):
        p = make_lumpy(2, 0)
        assert np.all(p.prior_sd > 3.5 * 0.2)


class TestStudent:
    def test_dof_spacing(self):
        p = make_student(2)
        assert np.allclose(p.params["dof"], [2.5, 3.0])
        p6 = make_student(6)
        assert p6.params["dof"][0] == 2.5
        assert p6.params["dof"][-1] == 5.0

    def test_product_structure(self):
        p = make_student(3)
        total = 0.0
        for i in range(3):
            dof = p.params["dof"][i]
            sd = p.prior_sd[i]

            def joint(x):
                return student_t.pdf(x, df=dof) * math.exp(
                    -0.5 * (x / sd) ** 2
                ) / (sd * math.sqrt(2 * math.pi))

            z, _ = scipy_quad(joint, -np.inf, np.inf)
            total += math.log(z)
        assert p.lml_true == pytest.approx(total, abs=1e-8)

    def test_quadrature_matches_monte_carlo(self):
        p = make_student(1)
        rng = np.random.default_rng(0)
        n = 10**7
        xs = rng.normal(0.0, p.prior_sd[0], size=n)
        vals = student_t.pdf(xs, df=p.params["dof"][0])
        z_mc = vals.mean()
        se = vals.std(ddof=1) / math.sqrt(n)
        assert abs(math.exp(p.lml_true) - z_mc) < 4 * se


class TestCigar:
    def test_eigenvalue_ratio_exact(self):
        p = make_cigar(4, 0)
        ev = np.linalg.eigvalsh(p.params["cov_lik"])
        assert ev.max() / ev.min() == pytest.approx(100.0**2, rel=1e-9)

    def test_posterior_covariance_closed_form(self):
        p = make_cigar(3, 1)
        cov_prior = np.diag(p.prior_sd**2)
        oracle = np.linalg.inv(
            np.linalg.inv(p.params["cov_lik"]) + np.linalg.inv(cov_prior)
        )
        assert np.allclose(p.post_cov, oracle, atol=1e-10)

    def test_lml_matches_grid(self):
        p = make_cigar(2, 0)
        report = verify_ground_truth(p)
        assert report["lml"] == pytest.approx(p.lml_true, abs=1e-4)

    def test_d1_rejected(self):
        with pytest.raises(ValueError):
            make_cigar(1, 0)


class TestGroundTruthChecks:
    def test_importance_sampling_reports_ess(self):
        p = make_lumpy(4, 0)
        report = verify_ground_truth(p, rng=np.random.default_rng(5), n_is=50_000)
        assert report["method"] == "importance"
        assert report["ess"] > 1000
        assert report["lml"] == pytest.approx(p.lml_true, abs=0.02)


class TestMetrics:
    class FakeResult:
        def __init__(self, elbo_mean, mean, cov):
            self.elbo_mean = elbo_mean
            self._m = np.asarray(mean)
            self._c = np.asarray(cov)

        def moments_original(self):
            return self._m, self._c

    def test_perfect_recovery(self):
        p = make_cigar(2, 0)
        res = self.FakeResult(p.lml_true, p.post_mean, p.post_cov)
        assert metric_lml_error(res, p) == 0.0
        assert metric_gskl(res, p) == pytest.approx(0.0, abs=1e-10)

    def test_unit_shift_gskl(self):
        p = make_cigar(2, 0)
        sd0 = math.sqrt(p.post_cov[0, 0])
        shifted = p.post_mean.copy()
        shifted[0] += sd0
        skl = gaussian_skl(shifted, p.post_cov, p.post_mean, p.post_cov)
        # one-SD mean shift contributes exactly 1/2 along that direction
        assert skl == pytest.approx(0.5)


class TestRunner:
    @pytest.fixture(scope="class")
    def small_sweep(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("bench") / "records.jsonl"
        config = RunConfig(
            families=("lumpy",),
            dims=(2,),
            seeds=(0, 1),
            budget_multiplier=0.4,  # 80 evaluations: fast smoke sweep
            out=str(out),
        )
        records = run_benchmark(config)
        return config, records, out

    def test_record_counts_and_budget(self, small_sweep):
        config, records, out = small_sweep
        assert len(records) == 2
        for rec in records:
            assert rec.budget == 80
            assert rec.final["fevals"] <= 80

    def test_checkpoints_monotone(self, small_sweep):
        _, records, _ = small_sweep
        for rec in records:
            evals = [c[0] for c in rec.checkpoints]
            assert all(a <= b for a, b in zip(evals, evals[1:]))

    def test_records_persisted_as_jsonl(self, small_sweep):
        _, records, out = small_sweep
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 2
        assert lines[0]["problem_id"] == "lumpy_D2_s0"

    def test_rerun_reproduces_records(self, small_sweep):
        config, records, _ = small_sweep
        again = execute_run("lumpy", 2, 0, records[0].run_seed, "pro", 0.4, 0)
        assert again.content_equal(records[0])

    def test_summary_and_csv(self, small_sweep, tmp_path):
        _, records, _ = small_sweep
        rows = summarize_records(records)
        assert len(rows) == 1
        row = rows[0]
        assert row["runs"] == 2
        assert row["lml_err_ci_lo"] <= row["lml_err_median"] <= row["lml_err_ci_hi"]
        write_summary_csv(rows, tmp_path / "summary.csv")
        write_long_csv(records, tmp_path / "long.csv")
        text = (tmp_path / "long.csv").read_text().splitlines()
        assert text[0] == "family,D,seed,evals,lml_err,gskl"
        assert len(text) > 2

    def test_bootstrap_reproducible(self, small_sweep):
        _, records, _ = small_sweep
        r1 = summarize_records(records, boot_seed=3)
        r2 = summarize_records(records, boot_seed=3)
        assert r1 == r2

    def test_x0_inside_prior_box(self):
        p = make_lumpy(2, 0)
        for seed in range(10):
            x0 = p.draw_x0(np.random.default_rng(seed))
            assert np.all(x0 >= p.prior_mean - p.prior_sd)
            assert np.all(x0 <= p.prior_mean + p.prior_sd)

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            make_problem("banana", 2, 0)
