import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from conftest import make_panel, noiseless_panel
from dpthreshold.estimator import (
    GridSpec,
    closed_form_slopes,
    coefficient_names,
    grid_search,
    profile,
    residuals,
    two_step_estimate,
)
from dpthreshold.exceptions import EmptyGrid, NearSingularGram
from dpthreshold.moments import ModelSpec, build_moment_system, gmm_criterion
from dpthreshold.panel import PanelData

JUMP = ModelSpec("y", "q", regressors=["x"], extra_instruments=["w"])
KINK = ModelSpec("y", "q", regressors=["q"], extra_instruments=["x", "w"], kink=True,
                 static=True)


def random_system(seed, n=60, T=6):
    panel = make_panel(n=n, T=T, seed=seed, names=("y", "q", "x", "w"))
    return build_moment_system(JUMP, panel)


class TestGridSpec:
    def test_levels(self):
        q = np.arange(101.0)
        g = GridSpec.from_sample(q, grid_num=3, trim_rate=0.4)
        np.testing.assert_allclose(g.points, [20.0, 50.0, 80.0])

    def test_singleton_is_median(self):
        q = np.array([3.0, 1.0, 2.0, 10.0, 0.0])
        assert GridSpec.from_sample(q, grid_num=1).points.tolist() == [2.0]

    def test_dedup_and_sort(self):
        assert GridSpec.from_points([2, 1, 2, 0]).points.tolist() == [0, 1, 2]
        assert len(GridSpec.from_sample(np.zeros(50), grid_num=10)) == 1

    def test_empty(self):
        ms = random_system(0)
        with pytest.raises(EmptyGrid):
            grid_search(ms, [])


class TestClosedForm:
    @pytest.mark.parametrize("seed", range(4))
    def test_matches_numerical_minimiser(self, seed):
        ms = random_system(seed)
        gamma = float(np.median(ms.q_pool))
        b, crit = closed_form_slopes(ms, gamma)

        def f(v):
            return gmm_criterion(ms, np.r_[v, gamma])

        res = optimize.minimize(f, np.zeros(ms.k), method="BFGS",
                                options={"gtol": 1e-12, "maxiter": 10_000})
        np.testing.assert_allclose(b, res.x, atol=1e-6)
        assert crit == pytest.approx(f(b), rel=1e-9, abs=1e-14)
        assert crit <= res.fun + 1e-12

    def test_normal_equations(self):
        ms = random_system(7)
        gamma = float(np.quantile(ms.q_pool, 0.4))
        b, _ = closed_form_slopes(ms, gamma)
        g2 = ms.g2_bar(gamma)[0]
        lhs = g2.T @ ms.W @ g2 @ b
        np.testing.assert_allclose(lhs, g2.T @ ms.W @ ms.g1_bar, rtol=1e-8, atol=1e-12)

    def test_saturated_threshold_uses_pseudo_inverse(self):
        ms = random_system(3)
        gamma = ms.q_pool.min() - 1.0
        with pytest.warns(NearSingularGram):
            b, crit = closed_form_slopes(ms, gamma)
        assert np.all(np.isfinite(b))
        # same fit as the linear model: beta + delta_x acts as one slope
        lin = ms.g2_bar(gamma)[0][:, :ms.k1]
        bl = np.linalg.solve(lin.T @ ms.W @ lin, lin.T @ ms.W @ ms.g1_bar)
        np.testing.assert_allclose(b[:ms.k1] + b[ms.k1 + 1:], bl, rtol=1e-7)
        # minimum norm splits the slope evenly
        np.testing.assert_allclose(b[:ms.k1], b[ms.k1 + 1:], rtol=1e-7)

    def test_profile_batch_matches_single(self):
        ms = random_system(5)
        gammas = np.quantile(ms.q_pool, [0.3, 0.5, 0.6])
        prof = profile(ms, gammas, with_map=True)
        for j, g in enumerate(gammas):
            b, c = closed_form_slopes(ms, g)
            np.testing.assert_allclose(prof.slopes[j], b, rtol=1e-12)
            np.testing.assert_allclose(prof.slope_map[j] @ ms.g1_bar, b, rtol=1e-10)


class TestGridSearch:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 1000), st.integers(2, 15))
    def test_refinement_never_increases_minimum(self, seed, m):
        ms = random_system(seed % 5)
        rng = np.random.default_rng(seed)
        coarse = np.quantile(ms.q_pool, rng.uniform(0.2, 0.8, m))
        fine = np.r_[coarse, np.quantile(ms.q_pool, rng.uniform(0.2, 0.8, 2 * m))]
        assert grid_search(ms, fine).criterion <= grid_search(ms, coarse).criterion + 1e-15

    def test_ties_pick_smallest(self):
        ms = random_system(1)
        qs = np.sort(ms.q_pool)
        a = qs[100] + 0.2 * (qs[101] - qs[100])
        b = qs[100] + 0.7 * (qs[101] - qs[100])
        assert grid_search(ms, [b, a]).gamma == a

    def test_exhaustive(self):
        ms = random_system(2)
        grid = GridSpec.from_sample(ms.q_pool, 15)
        res = grid_search(ms, grid)
        crits = [closed_form_slopes(ms, g)[1] for g in grid.points]
        assert res.criterion == pytest.approx(min(crits), rel=1e-12)
        assert res.gamma == grid.points[int(np.argmin(crits))]


class TestNoiselessRecovery:
    def test_jump(self):
        beta, delta, gamma = np.array([0.4, 1.0]), np.array([0.5, -0.3, 0.7]), 0.2
        panel = noiseless_panel(beta, delta, gamma, n=80, T=6)
        grid = GridSpec.from_points(np.r_[np.linspace(-0.6, 0.6, 9), gamma])
        est = two_step_estimate(JUMP, panel, grid=grid)
        assert est.gamma == gamma
        np.testing.assert_allclose(est.beta, beta, atol=1e-8)
        np.testing.assert_allclose(est.delta, delta, atol=1e-8)
        assert est.first_step.criterion == pytest.approx(0.0, abs=1e-18)

    def test_kink(self):
        beta, kappa, gamma = np.array([1.0]), 0.8, -0.1
        panel = noiseless_panel(beta, kappa, gamma, n=80, T=5, kink=True, static=True)
        grid = GridSpec.from_points(np.r_[np.linspace(-0.5, 0.5, 6), gamma])
        est = two_step_estimate(KINK, panel, grid=grid)
        assert est.gamma == gamma
        np.testing.assert_allclose(est.beta, beta, atol=1e-8)
        assert est.kappa == pytest.approx(kappa, abs=1e-8)

    def test_residuals_vanish_at_truth(self):
        beta, delta, gamma = np.array([0.4, 1.0]), np.array([0.5, -0.3, 0.7]), 0.2
        panel = noiseless_panel(beta, delta, gamma, n=30, T=5)
        e = residuals(JUMP, panel, np.r_[beta, delta, gamma])
        assert e.shape == (30, 3)
        np.testing.assert_allclose(e, 0.0, atol=1e-12)


class TestEstimate:
    def test_names_and_shapes(self):
        panel = make_panel(n=80, T=6, names=("y", "q", "x", "w"))
        est = two_step_estimate(JUMP, panel)
        assert est.names == ["L.y_b", "x_b", "cons_d", "L.y_d", "x_d", "r"]
        assert est.vcov.shape == (6, 6) and est.ci95.shape == (6, 2)
        assert est.weight_stage == "second" and est.t0 == 3 and est.T == 6
        assert est.gamma in est.grid.points
        assert list(est.summary_frame().index) == est.names
        ms = est.moment_system
        np.testing.assert_allclose(est.residuals, ms.residuals(est.slopes, est.gamma))
        assert est.criterion_value == pytest.approx(gmm_criterion(ms, est.coef), rel=1e-9)

    def test_kink_names(self):
        assert coefficient_names(["bmi"], True) == ["bmi_b", "kink_slope", "r"]

    def test_static_scale_equivariance(self):
        panel = make_panel(n=80, T=4, names=("y", "q", "x", "w"))
        spec = ModelSpec("y", "q", regressors=["x"], extra_instruments=["w"], static=True)
        s = dict(panel.series)
        s["y"] = 3.0 * s["y"]
        scaled = PanelData(panel.unit_ids, panel.time_ids, s)
        a, b = two_step_estimate(spec, panel), two_step_estimate(spec, scaled)
        assert a.gamma == b.gamma
        np.testing.assert_allclose(b.slopes, 3.0 * a.slopes, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(b.se[:-1], 3.0 * a.se[:-1], rtol=1e-6)

    def test_singleton_grid(self):
        panel = make_panel(n=60, T=6, names=("y", "q", "x", "w"))
        spec = ModelSpec("y", "q", regressors=["x"], extra_instruments=["w"], grid_num=1)
        est = two_step_estimate(spec, panel)
        ms = est.moment_system
        assert est.gamma == pytest.approx(np.median(ms.q_pool))

    def test_skip_vcov(self):
        panel = make_panel(n=60, T=6, names=("y", "q", "x", "w"))
        est = two_step_estimate(JUMP, panel, compute_vcov=False)
        assert np.isnan(est.vcov).all() and np.isnan(est.ci95).all()
