import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from attnqp import QpInstance, StepSizeError, StepSizes, default_steps, evaluate_objective, evaluate_residual
from attnqp.factory import generate_baseline
from attnqp.qp_core import QpValidationError
from attnqp.solvers import (
    SolveConfig,
    arrow_hurwicz_step,
    gd_step,
    ista_step,
    pgd_step,
    project_l1_ball_sort,
    run,
    soft_threshold,
)
from oracles import active_set_qp, bisection_l1_projection


def fixed(gamma, eta=1.0, L=2.0, c=None):
    return StepSizes(gamma=gamma, eta=eta, lipschitz=L, c_opnorm=c)


class TestGradientDescent:
    def test_toy_steps(self, u_toy):
        s = fixed(0.25)
        np.testing.assert_array_equal(gd_step(u_toy, s, [0.0, 0.0]), [0.5, 0.5])
        np.testing.assert_array_equal(gd_step(u_toy, s, [1.0, 1.0]), [1.0, 1.0])

    def test_seed_7_matches_linear_solve(self):
        inst = generate_baseline(5, 0, "U", seed=7)
        tr = run(inst, cfg=SolveConfig(max_iters=200, tol=0.0))
        x_star = -np.linalg.solve(inst.a_matrix, inst.b_vec)
        # 200 steps at gamma = 1/L contract by (1 - 1/kappa)^200; keep the claim honest to kappa
        kappa = np.linalg.cond(inst.a_matrix)
        bound = (1 - 1 / kappa) ** 200 * np.linalg.norm(x_star)
        assert np.max(np.abs(tr.x - x_star)) <= max(1e-8, bound)

    def test_run_converges_on_toy(self, u_toy):
        tr = run(u_toy, cfg=SolveConfig(tol=1e-10))
        assert tr.converged
        np.testing.assert_allclose(tr.x, [1.0, 1.0], atol=1e-9)

    def test_step_size_rejected_before_first_step(self, u_toy):
        with pytest.raises(StepSizeError, match="step size violates 0<γ<2/L"):
            run(u_toy, default_steps(u_toy, gamma=3.0 / u_toy.lipschitz))

    def test_max_iters_flagged(self):
        inst = generate_baseline(8, 0, "U", seed=1)
        tr = run(inst, cfg=SolveConfig(max_iters=3, tol=1e-14))
        assert tr.iterations == 3 and not tr.converged


class TestArrowHurwicz:
    def test_kkt_point_is_fixed(self, lc_toy):
        s = fixed(0.5, 0.5, L=1.0, c=np.sqrt(2.0))
        x, lam = arrow_hurwicz_step(lc_toy, s, [1.0, 1.0], [1.0])
        np.testing.assert_array_equal(x, [1.0, 1.0])
        np.testing.assert_array_equal(lam, [1.0])

    def test_from_origin(self, lc_toy):
        s = fixed(0.5, 0.5, L=1.0, c=np.sqrt(2.0))
        x, lam = arrow_hurwicz_step(lc_toy, s, [0.0, 0.0], [0.0])
        np.testing.assert_array_equal(x, [1.0, 1.0])
        np.testing.assert_array_equal(lam, [0.0])

    def test_dual_uses_updated_primal(self, lc_toy):
        s = fixed(0.5, 0.5, L=1.0, c=np.sqrt(2.0))
        # x' = [2, 2] from x = [1, 1], lam = 0, so lam' = 0.5 * (4 - 2) = 1;
        # the stale x would give lam' = 0
        x, lam = arrow_hurwicz_step(lc_toy, s, [1.0, 1.0], [0.0])
        np.testing.assert_array_equal(x, [1.5, 1.5])
        np.testing.assert_array_equal(lam, [0.5])

    def test_run_on_toy(self, lc_toy):
        tr = run(lc_toy, cfg=SolveConfig(tol=1e-6))
        assert tr.converged
        np.testing.assert_allclose(tr.x, [1.0, 1.0], atol=1e-5)
        np.testing.assert_allclose(tr.lam, [1.0], atol=1e-5)

    def test_seed_11_against_active_set(self):
        inst = generate_baseline(5, 3, "LC", seed=11)
        tr = run(inst, cfg=SolveConfig(max_iters=50_000, tol=0.0, record_trace=False))
        assert evaluate_residual(inst, tr.x, tr.lam) <= 1e-6
        x_ref, lam_ref = active_set_qp(inst.a_matrix, inst.b_vec, inst.c_matrix, inst.d_vec)
        np.testing.assert_allclose(tr.x, x_ref, atol=1e-6)
        np.testing.assert_allclose(tr.lam, lam_ref, atol=1e-6)

    def test_active_constraints_against_oracle(self):
        # orient rows so the free minimizer violates every constraint by half
        base = generate_baseline(4, 3, "LC", seed=5)
        x_free = -np.linalg.solve(base.a_matrix, base.b_vec)
        slack = base.c_matrix @ x_free
        c = base.c_matrix * np.sign(slack)[:, None]
        inst = QpInstance("LC", base.a_matrix, base.b_vec, c, 0.5 * np.abs(slack))
        tr = run(inst, cfg=SolveConfig(max_iters=200_000, tol=1e-10, record_trace=False))
        x_ref, lam_ref = active_set_qp(inst.a_matrix, inst.b_vec, inst.c_matrix, inst.d_vec)
        assert np.any(lam_ref > 0)
        np.testing.assert_allclose(tr.x, x_ref, atol=1e-8)
        np.testing.assert_allclose(tr.lam, lam_ref, atol=1e-7)

    def test_duals_stay_non_negative(self):
        inst = generate_baseline(6, 4, "LC", seed=2)
        tr = run(inst, cfg=SolveConfig(max_iters=10_000, tol=0.0))
        assert min(float(l.min()) for l in tr.duals) >= 0.0

    def test_negative_initial_dual_rejected(self, lc_toy):
        with pytest.raises(QpValidationError):
            run(lc_toy, cfg=SolveConfig(lam0=[-1.0]))


class TestSoftThreshold:
    def test_examples(self):
        np.testing.assert_array_equal(soft_threshold([2.0, -0.3, 0.5], 0.5), [1.5, 0.0, 0.0])
        np.testing.assert_array_equal(soft_threshold([-1.0, -1.0], 0.25), [-0.75, -0.75])

    @given(hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6)))
    def test_zero_threshold_is_identity(self, y):
        np.testing.assert_array_equal(soft_threshold(y, 0.0), y)

    def test_negative_threshold_rejected(self):
        with pytest.raises(QpValidationError):
            soft_threshold([1.0], -0.1)


class TestIsta:
    def test_toy(self, r_toy):
        s = fixed(1.0, L=1.0)
        np.testing.assert_array_equal(ista_step(r_toy, s, [0.0, 0.0]), [1.5, 0.0])
        np.testing.assert_array_equal(ista_step(r_toy, s, [1.5, 0.0]), [1.5, 0.0])

    def test_seed_3_descent_and_long_run_oracle(self):
        inst = generate_baseline(5, 0, "R", seed=3)
        tr = run(inst, cfg=SolveConfig(max_iters=10_000, tol=0.0))
        f = np.array(tr.objectives)
        assert np.all(np.diff(f[:501]) <= 1e-12)
        assert tr.residuals[-1] <= 1e-6
        slow = default_steps(inst, gamma=0.5 / inst.lipschitz)
        ref = run(inst, slow, SolveConfig(max_iters=1_000_000, tol=1e-13, record_trace=False))
        np.testing.assert_allclose(tr.x, ref.x, atol=1e-7)


    @pytest.mark.xfail(strict=True, reason="seed 3 draws kappa(A) ~ 184, so 500 steps leave residual ~5e-4")
    def test_seed_3_residual_after_500_steps(self):
        inst = generate_baseline(5, 0, "R", seed=3)
        tr = run(inst, cfg=SolveConfig(max_iters=500, tol=0.0))
        assert tr.residuals[-1] <= 1e-8


class TestProjection:
    def test_examples(self):
        np.testing.assert_array_equal(project_l1_ball_sort([0.3, -0.2], 1.0), [0.3, -0.2])
        np.testing.assert_array_equal(project_l1_ball_sort([2.0, 2.0], 1.0), [0.5, 0.5])
        np.testing.assert_array_equal(project_l1_ball_sort([3.0, 1.0], 2.0), [2.0, 0.0])

    def test_bisection_oracle(self):
        x, theta = bisection_l1_projection([3.0, 1.0], 2.0)
        np.testing.assert_allclose(x, [2.0, 0.0], atol=1e-12)
        assert theta == pytest.approx(1.0, abs=1e-12)

    def test_boundary_is_identity(self):
        y = np.array([0.25, -0.75])
        np.testing.assert_array_equal(project_l1_ball_sort(y, 1.0), y)

    def test_ties_do_not_matter(self):
        y = np.array([1.0, -1.0, 1.0, 0.5, -1.0])
        out = project_l1_ball_sort(y, 2.0)
        perm = np.array([4, 2, 0, 3, 1])
        np.testing.assert_array_equal(project_l1_ball_sort(y[perm], 2.0), out[perm])

    def test_kkt_and_random_feasible_sample(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 11))
            y = rng.standard_normal(n) * rng.uniform(0.1, 5)
            budget = float(rng.uniform(0.05, 3))
            x = project_l1_ball_sort(y, budget)
            assert np.abs(x).sum() <= budget + 1e-10
            ref, theta = bisection_l1_projection(y, budget)
            np.testing.assert_allclose(x, ref, atol=1e-10)
            assert theta >= 0 and abs(theta * (np.abs(x).sum() - budget)) <= 1e-10
            # stationarity: y - x = theta * g with g a subgradient of ||.||_1 at x
            g = y - x
            on = x != 0
            np.testing.assert_allclose(g[on], theta * np.sign(x[on]), atol=1e-10)
            assert np.all(np.abs(g[~on]) <= theta + 1e-10)
        y = rng.standard_normal(6) * 3
        budget = 1.5
        x = project_l1_ball_sort(y, budget)
        pts = rng.standard_normal((10_000, 6))
        pts *= (budget * rng.uniform(0, 1, (10_000, 1))) / np.abs(pts).sum(axis=1, keepdims=True)
        assert np.linalg.norm(x - y) <= np.min(np.linalg.norm(pts - y, axis=1))

    def test_non_positive_budget_rejected(self):
        with pytest.raises(QpValidationError):
            project_l1_ball_sort([1.0], 0.0)


class TestProjectedGradient:
    def test_toy(self, c_toy):
        s = fixed(1.0, eta=0.5, L=1.0)
        np.testing.assert_array_equal(pgd_step(c_toy, s, [0.0, 0.0]), [0.5, 0.5])
        np.testing.assert_array_equal(pgd_step(c_toy, s, [0.5, 0.5]), [0.5, 0.5])

    def test_seed_5_feasible_and_long_run_oracle(self):
        inst = generate_baseline(5, 0, "C", seed=5)
        tr = run(inst, cfg=SolveConfig(max_iters=1000, tol=0.0))
        assert tr.residuals[-1] <= 1e-8
        assert all(np.abs(x).sum() <= inst.l1_budget + 1e-12 for x in tr.iterates[1:])
        slow = default_steps(inst, gamma=0.5 / inst.lipschitz)
        ref = run(inst, slow, SolveConfig(max_iters=1_000_000, tol=1e-13, record_trace=False))
        np.testing.assert_allclose(tr.x, ref.x, atol=1e-7)


@pytest.mark.parametrize("seed", range(10))
def test_gd_linear_rate(seed):
    inst = generate_baseline(int(np.random.default_rng(seed).integers(2, 17)), 0, "U", seed)
    x_star = -np.linalg.solve(inst.a_matrix, inst.b_vec)
    s = default_steps(inst, gamma=1.5 / inst.lipschitz)
    rate = np.max(np.abs(1 - s.gamma * np.linalg.eigvalsh(inst.a_matrix)))
    tr = run(inst, s, SolveConfig(max_iters=200, tol=0.0))
    e0 = np.linalg.norm(tr.iterates[0] - x_star)
    for k, x in enumerate(tr.iterates):
        assert np.linalg.norm(x - x_star) <= rate**k * e0 + 1e-12


@given(st.integers(0, 10_000))
def test_ista_monotone_descent_property(seed):
    inst = generate_baseline(4, 0, "R", seed)
    tr = run(inst, cfg=SolveConfig(max_iters=60, tol=0.0))
    assert np.all(np.diff(tr.objectives) <= 1e-12)


@given(st.integers(0, 10_000))
def test_pgd_iterates_feasible_property(seed):
    inst = generate_baseline(4, 0, "C", seed)
    tr = run(inst, cfg=SolveConfig(max_iters=60, tol=0.0))
    for x in tr.iterates[1:]:
        assert np.abs(x).sum() <= inst.l1_budget + 1e-12
        assert evaluate_objective(inst, x) == evaluate_objective(inst, x)
