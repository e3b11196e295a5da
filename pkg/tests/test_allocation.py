import itertools

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twophase.allocation import (
    Allocation,
    AllocationError,
    StratumMoments,
    allocation_to_probabilities,
    fixed_design,
    if_gr_allocation,
    if_ipw_allocation,
    integer_allocation,
    neyman_real,
    stratum_moments,
)
from twophase.cohort import Cohort, StratificationRule, StratumIndex, stratify
from twophase.scenarios import ScenarioSpec, generate


def stratified_variance(sizes, sds, n_k):
    n_k = np.asarray(n_k, dtype=float)
    return float(np.sum((sizes - n_k) * sizes * sds**2 / n_k))


def enumerate_optimum(sizes, sds, n, min_per):
    """Brute-force oracle over every feasible integer composition."""
    best, best_v = None, np.inf
    ranges = [range(min_per, int(N) + 1) for N in sizes]
    for combo in itertools.product(*ranges):
        if sum(combo) != n:
            continue
        v = stratified_variance(np.asarray(sizes), np.asarray(sds), np.asarray(combo))
        if v < best_v - 1e-12:
            best, best_v = combo, v
    return best, best_v


class TestNeymanReal:
    def test_symmetric(self):
        m = StratumMoments([100, 100], [1.0, 1.0])
        npt.assert_allclose(neyman_real(m, 20), [10, 10])

    def test_weighted(self):
        m = StratumMoments([100, 300], [2.0, 1.0])
        npt.assert_allclose(neyman_real(m, 50), [20, 30])

    def test_zero_variance_stratum(self):
        m = StratumMoments([50, 50], [0.0, 1.0])
        npt.assert_allclose(neyman_real(m, 10), [0, 10])

    def test_all_zero_is_error(self):
        with pytest.raises(AllocationError):
            neyman_real(StratumMoments([10, 10], [0.0, 0.0]), 5)


class TestIntegerAllocation:
    def test_symmetric_tie_breaks_to_lower_index(self):
        alloc = integer_allocation(StratumMoments([10, 10], [1.0, 1.0]), 5, min_per_stratum=1)
        npt.assert_array_equal(alloc.n_k, [3, 2])

    def test_matches_enumeration(self):
        sizes, sds = np.array([50, 30, 20]), np.array([1.0, 2.0, 0.5])
        alloc = integer_allocation(StratumMoments(sizes, sds), 12, min_per_stratum=2)
        _, best_v = enumerate_optimum(sizes, sds, 12, 2)
        assert stratified_variance(sizes, sds, alloc.n_k) == pytest.approx(best_v)

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_optimality_property(self, data):
        k = data.draw(st.integers(2, 4))
        sizes = np.array(data.draw(st.lists(st.integers(3, 15), min_size=k, max_size=k)))
        sds = np.array(data.draw(
            st.lists(st.floats(0.0, 5.0, allow_nan=False), min_size=k, max_size=k)
        ))
        n = data.draw(st.integers(k, min(int(sizes.sum()), 30)))
        if n < k:
            return
        alloc = integer_allocation(StratumMoments(sizes, sds), n, min_per_stratum=1)
        if (sds > 0).any():
            _, best_v = enumerate_optimum(sizes, sds, n, 1)
            assert stratified_variance(sizes, sds, alloc.n_k) <= best_v + 1e-9
        assert alloc.n_k.sum() == n
        assert (alloc.n_k >= 1).all() and (alloc.n_k <= sizes).all()

    def test_scale_invariance(self):
        m1 = StratumMoments([40, 25, 60], [0.5, 2.0, 1.2])
        m2 = StratumMoments([40, 25, 60], np.array([0.5, 2.0, 1.2]) * 37.5)
        a1 = integer_allocation(m1, 31)
        a2 = integer_allocation(m2, 31)
        npt.assert_array_equal(a1.n_k, a2.n_k)

    def test_caps_redistribute(self):
        # stratum 1 wants nearly everything but is tiny; overflow re-granted greedily
        alloc = integer_allocation(StratumMoments([4, 100, 100], [50.0, 1.0, 0.5]), 30,
                                   min_per_stratum=1)
        assert alloc.n_k[0] == 4
        assert alloc.n_k.sum() == 30
        assert alloc.n_k[1] > alloc.n_k[2]

    def test_infeasible_bounds(self):
        with pytest.raises(AllocationError):
            integer_allocation(StratumMoments([10, 10], [1.0, 1.0]), 3, min_per_stratum=2)
        with pytest.raises(AllocationError):
            integer_allocation(StratumMoments([1, 10], [1.0, 1.0]), 5, min_per_stratum=2)


def _index_from_groups(groups):
    groups = np.asarray(groups)
    cohort = Cohort(columns={"g": groups.astype(float)}, roles={"g": "phase1"})
    return stratify(cohort, StratificationRule("explicit-column", ("g",)))


class TestInfluenceDesigns:
    def test_constant_within_strata_falls_back_to_proportional(self):
        index = _index_from_groups([0] * 30 + [1] * 10)
        h = np.where(np.arange(40) < 30, 1.5, -2.0)  # constant within stratum
        alloc = if_ipw_allocation(h, index, 12, min_per_stratum=2)
        assert alloc.policy["fallback"] == "proportional"
        npt.assert_array_equal(alloc.n_k, [9, 3])

    def test_sd_ratio_three_to_one(self):
        rng = np.random.default_rng(0)
        index = _index_from_groups([0] * 4000 + [1] * 4000)
        h = np.concatenate([rng.standard_normal(4000) * 3.0, rng.standard_normal(4000)])
        alloc = if_ipw_allocation(h, index, 400, min_per_stratum=2)
        assert alloc.n_k[0] / alloc.n_k[1] == pytest.approx(3.0, rel=0.08)

    def test_series1_tails_get_larger_share(self):
        data = generate(ScenarioSpec(series="1", params={"rho": 0.9}, seed=4))
        alloc = if_ipw_allocation(data.h_true, data.index, 600)
        # stratum 0 is the middle band of the auxiliary, stratum 1 the tails
        assert alloc.n_k[1] > alloc.n_k[0]

    def test_perfect_auxiliary_falls_back_to_proportional(self):
        index = _index_from_groups([0] * 30 + [1] * 30)
        h = np.random.default_rng(1).standard_normal(60)
        alloc = if_gr_allocation(h, h, index, 20)
        assert alloc.policy["fallback"] == "proportional"

    def test_forced_zero_gamma_equals_if_ipw(self):
        rng = np.random.default_rng(2)
        index = _index_from_groups([0] * 50 + [1] * 50)
        h = rng.standard_normal(100)
        h_hat = rng.standard_normal(100)
        a = if_gr_allocation(h, h_hat, index, 30, force_gamma=0.0)
        b = if_ipw_allocation(h, index, 30)
        npt.assert_array_equal(a.n_k, b.n_k)

    def test_constant_h_hat_treated_as_zero_gamma(self):
        rng = np.random.default_rng(3)
        index = _index_from_groups([0] * 50 + [1] * 50)
        h = rng.standard_normal(100)
        alloc = if_gr_allocation(h, np.ones(100), index, 30)
        assert alloc.policy["gamma"] == 0.0
        npt.assert_array_equal(alloc.n_k, if_ipw_allocation(h, index, 30).n_k)

    def test_tripled_tail_residuals_pull_design_toward_tails(self):
        # best estimate rebuilt as h - 3r in the tail stratum (h - r elsewhere):
        # tripling the tail residual sd must strictly raise the tail share
        from twophase.allocation import residual_against_best_estimate

        data = generate(ScenarioSpec(series="1", params={"rho": 0.9}, seed=5))
        h = data.h_true
        r, _ = residual_against_best_estimate(h, data.h_best)
        tails = data.index.assignment == 1
        star_plain = h - r
        star_tripled = np.where(tails, h - 3.0 * r, h - r)
        a_plain = if_gr_allocation(h, star_plain, data.index, 600)
        a_tripled = if_gr_allocation(h, star_tripled, data.index, 600)
        assert a_tripled.n_k[1] > a_plain.n_k[1]


class TestFixedDesigns:
    @pytest.fixture
    def nwts_index(self):
        data = generate(ScenarioSpec(series="nwts", seed=2))
        return data

    def test_pss_matches_published_allocation(self, nwts_index):
        alloc = fixed_design("pss", nwts_index.index, 1337)
        npt.assert_array_equal(alloc.n_k, [1034, 75, 173, 55])

    def test_bss_even_split(self):
        index = _index_from_groups([0] * 300 + [1] * 300 + [2] * 300)
        npt.assert_array_equal(fixed_design("bss", index, 600).n_k, [200, 200, 200])

    def test_bss_remainder_to_lowest_indices(self):
        index = _index_from_groups([0] * 50 + [1] * 50 + [2] * 50)
        npt.assert_array_equal(fixed_design("bss", index, 11).n_k, [4, 4, 3])

    def test_scc_all_cases_and_matched_controls(self, nwts_index):
        alloc = fixed_design(
            "scc", nwts_index.index, 1338, case_column=nwts_index.cohort.col("relapse")
        )
        npt.assert_array_equal(alloc.n_k, [507, 162, 507, 162])

    def test_scc_case_count_over_budget(self, nwts_index):
        with pytest.raises(AllocationError, match="budget"):
            fixed_design("scc", nwts_index.index, 600,
                         case_column=nwts_index.cohort.col("relapse"))

    def test_srs_tabulates_draw(self):
        index = _index_from_groups([0] * 400 + [1] * 600)
        alloc = fixed_design("srs", index, 100, seed=0)
        assert alloc.n_k.sum() == 100
        assert abs(alloc.n_k[0] - 40) < 20


class TestProbabilities:
    def test_census(self):
        index = _index_from_groups([0] * 3 + [1] * 2)
        pi = allocation_to_probabilities(Allocation([3, 2], 5, {}), index)
        npt.assert_allclose(pi, 1.0)

    def test_values(self):
        index = _index_from_groups([0] * 100 + [1] * 300)
        pi = allocation_to_probabilities(Allocation([20, 30], 50, {}), index)
        assert set(np.round(np.unique(pi), 10)) == {0.1, 0.2}

    def test_sum_is_n(self):
        index = _index_from_groups([0] * 57 + [1] * 43 + [2] * 11)
        pi = allocation_to_probabilities(Allocation([10, 7, 3], 20, {}), index)
        assert pi.sum() == pytest.approx(20.0)


class TestCaseControlNeymanWeights:
    def test_rare_disease_weights_balance(self):
        # logistic influence column on a simulated rare cohort: the two
        # case/control Neyman weights agree within 10%
        from scipy.special import expit
        from twophase import glm

        rng = np.random.default_rng(11)
        N = 100_000
        x = rng.standard_normal(N)
        z = (rng.random(N) < 0.5).astype(float)
        eta = -3.02 + 0.0 * x + 0.5 * z
        y = (rng.random(N) < expit(eta)).astype(float)
        cohort = Cohort(
            columns={"y": y, "x": x, "z": z},
            roles={"y": "outcome", "x": "phase1", "z": "phase1"},
        )
        X, _ = glm.build_design_matrix(cohort, glm.ModelSpec("logistic", "y", (glm.Main("x"), glm.Main("z"))))
        fit = glm.fit_weighted(X, y, np.ones(N), "logistic")
        h = glm.influence_functions(fit, X, y).column(1)
        cases = y == 1
        w_case = cases.sum() * h[cases].std(ddof=1)
        w_ctrl = (~cases).sum() * h[~cases].std(ddof=1)
        assert w_case / w_ctrl == pytest.approx(1.0, abs=0.1)
