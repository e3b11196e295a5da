import numpy as np
import numpy.testing as npt
import pytest

from twophase import glm
from twophase.cohort import Cohort, SampleIndicator, StratificationRule, draw_sample, stratify
from twophase.estimators import ImputationSpec, impute_x, ipw_estimate, raking_estimate
from twophase.montecarlo import run_mc
from twophase.scenarios import ScenarioSpec, generate


def _census(n):
    return SampleIndicator(np.ones(n, dtype=bool), np.ones(n))


@pytest.fixture
def linear_cohort():
    rng = np.random.default_rng(0)
    n = 500
    x = rng.standard_normal(n)
    z = (rng.random(n) < 0.5).astype(float)
    y = 1.0 + x + z + rng.standard_normal(n)
    return Cohort(
        columns={"y": y, "x": x, "z": z},
        roles={"y": "outcome", "x": "phase2", "z": "phase1"},
    )


OUTCOME = glm.ModelSpec("linear", "y", (glm.Main("x"), glm.Main("z")))


class TestIpwEstimate:
    def test_census_equals_mle(self, linear_cohort):
        n = linear_cohort.n_rows
        res = ipw_estimate(linear_cohort, _census(n), OUTCOME, target="x")
        X, _ = glm.build_design_matrix(linear_cohort, OUTCOME)
        mle = np.linalg.lstsq(X, linear_cohort.col("y"), rcond=None)[0]
        npt.assert_allclose(res.beta, mle, atol=1e-10)

    def test_all_ones_pi_equals_pooled_fit(self, linear_cohort):
        n = linear_cohort.n_rows
        index = stratify(linear_cohort, StratificationRule("quantile-cut", ("z",), (0.5,)))
        sample = draw_sample(index, index.sizes, seed=0)  # census within two strata
        res = ipw_estimate(linear_cohort, sample, OUTCOME, target="x")
        pooled = ipw_estimate(linear_cohort, _census(n), OUTCOME, target="x")
        npt.assert_allclose(res.beta, pooled.beta, atol=1e-10)

    def test_design_unbiased_under_pss(self):
        # series-2 style data, PSS design: mean beta1_hat within 3 MC ses of truth
        spec = ScenarioSpec(series="2", params={"sigma": 0.5, "beta1": 1.0})
        errors = []
        for rep in range(500):
            rng = np.random.default_rng(np.random.SeedSequence(77, spawn_key=(rep,)))
            data = generate(spec, rng)
            from twophase.allocation import fixed_design

            alloc = fixed_design("pss", data.index, spec.n)
            sample = draw_sample(data.index, alloc, rng)
            res = ipw_estimate(data.cohort, sample, data.outcome_model, target="x")
            errors.append(res.target_coef - 1.0)
        errors = np.asarray(errors)
        assert abs(errors.mean()) < 3 * errors.std(ddof=1) / np.sqrt(len(errors))


class TestImputeX:
    def test_observed_kept_when_requested(self, linear_cohort):
        n = linear_cohort.n_rows
        spec = ImputationSpec(
            glm.ModelSpec("linear", "x", (glm.Main("z"),)), keep_observed=True
        )
        values = impute_x(linear_cohort, _census(n), spec)[0]
        npt.assert_allclose(values, linear_cohort.col("x"))

    def test_perfect_linear_relation(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal(200)
        cohort = Cohort(
            columns={"x": a.copy(), "a": a, "y": rng.standard_normal(200)},
            roles={"x": "phase2", "a": "auxiliary", "y": "outcome"},
        )
        spec = ImputationSpec(glm.ModelSpec("linear", "x", (glm.Main("a"),)))
        values = impute_x(cohort, _census(200), spec)[0]
        npt.assert_allclose(values, a, atol=1e-10)

    def test_multiple_mode_consistency(self):
        # draws spread around the single-mode prediction with finite, positive
        # between/within variance components
        spec = ScenarioSpec(series="2", params={"sigma": 0.75})
        data = generate(spec, np.random.default_rng(3))
        index = data.index
        from twophase.allocation import fixed_design

        sample = draw_sample(index, fixed_design("pss", index, 600).n_k, seed=1)
        single = impute_x(data.cohort, sample, data.imputation)[0]
        multi_spec = ImputationSpec(data.imputation.model, mode="multiple", m=50)
        draws = impute_x(data.cohort, sample, multi_spec, rng=np.random.default_rng(4))
        draws = np.asarray(draws)
        assert draws.shape == (50, data.cohort.n_rows)
        between = draws.mean(axis=0).var()
        within = draws.var(axis=0).mean()
        assert np.isfinite(between) and np.isfinite(within) and within > 0
        mean_gap = draws.mean(axis=0) - single
        assert abs(mean_gap.mean()) < 3 * draws.std(axis=0).mean() / np.sqrt(50)


class TestRakingEstimate:
    def test_census_is_noop(self, linear_cohort):
        n = linear_cohort.n_rows
        aux = linear_cohort.col("z")[:, None]
        res = raking_estimate(
            linear_cohort, _census(n), OUTCOME, auxiliaries=aux, target="x"
        )
        census = ipw_estimate(linear_cohort, _census(n), OUTCOME, target="x")
        npt.assert_allclose(res.beta, census.beta, atol=1e-8)

    def test_calibration_residual_reported(self):
        data = generate(ScenarioSpec(series="1", params={"rho": 0.9}), np.random.default_rng(5))
        from twophase.allocation import fixed_design

        sample = draw_sample(data.index, fixed_design("pss", data.index, 600).n_k, seed=2)
        res = raking_estimate(
            data.cohort, sample, data.outcome_model, auxiliaries=data.auxiliaries, target="x"
        )
        assert res.diagnostics["calibration_residual"] < 1e-6

    def test_never_reads_unselected_x(self):
        spec = ScenarioSpec(series="2", params={"sigma": 0.75})
        data = generate(spec, np.random.default_rng(6))
        from twophase.allocation import fixed_design

        sample = draw_sample(data.index, fixed_design("pss", data.index, 600).n_k, seed=3)
        rng_state = lambda: np.random.default_rng(99)
        res = raking_estimate(
            data.cohort, sample, data.outcome_model,
            imputation=data.imputation, target="x", rng=rng_state(),
        )
        poisoned_x = np.where(sample.selected, data.cohort.col("x"), 1e9)
        poisoned = Cohort(columns=dict(data.cohort.columns, x=poisoned_x),
                          roles=data.cohort.roles)
        res_poisoned = raking_estimate(
            poisoned, sample, data.outcome_model,
            imputation=data.imputation, target="x", rng=rng_state(),
        )
        npt.assert_allclose(res.target_coef, res_poisoned.target_coef, rtol=0, atol=0)

    def test_calibration_divergence_falls_back_to_ipw(self, linear_cohort, monkeypatch):
        from twophase import calibration
        from twophase import estimators as est_mod

        def diverge(*args, **kwargs):
            raise calibration.CalibrationError("rigged divergence")

        monkeypatch.setattr(est_mod.calibration, "calibrate", diverge)
        n = linear_cohort.n_rows
        aux = linear_cohort.col("z")[:, None]
        res = raking_estimate(linear_cohort, _census(n), OUTCOME, auxiliaries=aux, target="x")
        assert res.estimator == "raking"
        assert "rigged divergence" in res.diagnostics["calibration_fallback"]
        ipw = ipw_estimate(linear_cohort, _census(n), OUTCOME, target="x")
        npt.assert_allclose(res.beta, ipw.beta)

    def test_raking_no_less_efficient_than_ipw(self):
        # matched samples, 500 replicates: var(raking) <= 1.05 var(ipw)
        spec = ScenarioSpec(series="1", params={"rho": 0.7})
        report = run_mc(spec, ["srs"], ["ipw", "raking"], reps=500, master_seed=21, jobs=4)
        assert (
            report.cell("srs", "raking")["mse_star"]
            <= report.cell("srs", "ipw")["mse_star"] * 1.05
        )

    def test_gain_shrinks_with_auxiliary_quality(self):
        ratios = {}
        for rho in (0.99, 0.5):
            spec = ScenarioSpec(series="1", params={"rho": rho})
            report = run_mc(spec, ["srs"], ["ipw", "raking"], reps=300, master_seed=8, jobs=4)
            ratios[rho] = (
                report.cell("srs", "raking")["mse_star"]
                / report.cell("srs", "ipw")["mse_star"]
            )
        assert ratios[0.99] < ratios[0.5] < 1.05
