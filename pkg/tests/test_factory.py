import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnqp import QpInstance
from attnqp.factory import (
    GENERATOR,
    KAPPA_RANGES,
    generate_baseline,
    generate_kappa_shifted,
    metrics,
    r2_score,
    tokenize_sequence,
)
from attnqp.qp_core import QpValidationError
from attnqp.solvers import SolveConfig, run


def same(a: QpInstance, b: QpInstance) -> bool:
    return a.to_json() == b.to_json()


class TestBaseline:
    def test_deterministic(self):
        assert same(generate_baseline(5, 3, "LC", 42), generate_baseline(5, 3, "LC", 42))
        assert not same(generate_baseline(5, 3, "LC", 42), generate_baseline(5, 3, "LC", 43))

    def test_min_eigenvalue(self):
        for seed in range(200):
            a = generate_baseline(int(seed % 12) + 1, 0, "U", seed).a_matrix
            assert np.linalg.eigvalsh(a).min() >= 0.1 - 1e-12

    def test_origin_feasible_over_1000_seeds(self):
        for seed in range(1000):
            inst = generate_baseline(5, 3, "LC", seed)
            assert np.all(inst.d_vec >= 1.0) and np.all(inst.d_vec <= 2.0)
            assert np.all(inst.c_matrix @ np.zeros(5) <= inst.d_vec)

    def test_regularization_choices(self):
        r = generate_baseline(6, 0, "R", 3)
        assert r.l1_weight == pytest.approx(0.1 * np.max(np.abs(r.b_vec)))
        c = generate_baseline(6, 0, "C", 3)
        x_free = np.linalg.solve(c.a_matrix, c.b_vec)
        assert c.l1_budget == pytest.approx(0.5 * np.abs(x_free).sum())

    def test_generator_recorded(self):
        assert generate_baseline(3, 0, "U", 0).meta["generator"] == GENERATOR

    def test_dimension_errors(self):
        with pytest.raises(QpValidationError, match="needs m >= 1"):
            generate_baseline(4, 0, "LC", 0)
        with pytest.raises(QpValidationError, match="takes m = 0"):
            generate_baseline(4, 2, "U", 0)

    def test_baseline_kappa_distribution_is_sane(self):
        kappas = [np.linalg.cond(generate_baseline(5, 0, "U", s).a_matrix) for s in range(1000)]
        med = float(np.median(kappas))
        print(f"median baseline kappa at n=5: {med:.1f}")
        assert np.isfinite(med) and med > 1


class TestKappaShifted:
    @pytest.mark.parametrize("rng_range", KAPPA_RANGES)
    def test_kappa_in_range_and_norm_matched(self, rng_range):
        for seed in range(20):
            inst = generate_kappa_shifted(8, 4, rng_range, seed)
            ev = np.linalg.eigvalsh(inst.a_matrix)
            kappa = ev[-1] / ev[0]
            assert rng_range[0] - 1e-6 <= kappa <= rng_range[1] + 1e-6
            assert kappa == pytest.approx(inst.meta["kappa"], rel=1e-9)
            frob = np.linalg.norm(generate_baseline(8, 4, "LC", seed).a_matrix, "fro")
            assert np.linalg.norm(inst.a_matrix, "fro") == pytest.approx(frob, rel=1e-10)

    def test_explicit_frob_target(self):
        inst = generate_kappa_shifted(6, 2, (2.0, 5.0), 1, frob_target=3.5)
        assert np.linalg.norm(inst.a_matrix, "fro") == pytest.approx(3.5, rel=1e-10)

    def test_reuses_baseline_vectors(self):
        inst = generate_kappa_shifted(6, 2, (2.0, 5.0), 7)
        base = generate_baseline(6, 2, "LC", 7)
        np.testing.assert_array_equal(inst.b_vec, base.b_vec)
        np.testing.assert_array_equal(inst.c_matrix, base.c_matrix)
        np.testing.assert_array_equal(inst.d_vec, base.d_vec)

    def test_near_identity_limit(self):
        inst = generate_kappa_shifted(6, 0, (1 + 1e-9, 1 + 2e-9), 0, variant="U")
        x_star = -np.linalg.solve(inst.a_matrix, inst.b_vec)
        tr = run(inst, cfg=SolveConfig(max_iters=1, tol=0.0))
        assert np.max(np.abs(tr.x - x_star)) <= 1e-6

    def test_deterministic(self):
        assert same(generate_kappa_shifted(5, 3, (5, 10), 9), generate_kappa_shifted(5, 3, (5, 10), 9))

    def test_range_validated(self):
        with pytest.raises(QpValidationError):
            generate_kappa_shifted(5, 3, (1.0, 2.0), 0)
        with pytest.raises(QpValidationError):
            generate_kappa_shifted(5, 3, (3.0, 2.0), 0)

    @settings(max_examples=40)
    @given(st.integers(2, 16), st.floats(1.01, 50), st.integers(0, 10_000))
    def test_kappa_preserved_by_rescale(self, n, low, seed):
        inst = generate_kappa_shifted(n, 1, (low, low * 1.5), seed)
        ev = np.linalg.eigvalsh(inst.a_matrix)
        assert ev[-1] / ev[0] == pytest.approx(inst.meta["kappa"], rel=1e-9)


class TestTokenize:
    def test_length_and_width(self):
        toks = tokenize_sequence(generate_baseline(5, 3, "LC", 42))
        assert len(toks) == 11 and all(t.shape == (5,) for t in toks)

    def test_layout(self):
        inst = QpInstance("LC", np.eye(5) * 2, np.arange(5.0), np.ones((3, 5)), [1.5, 1.2, 1.9], seed=4)
        toks = tokenize_sequence(inst)
        np.testing.assert_array_equal(toks[0], inst.a_matrix[0])
        np.testing.assert_array_equal(toks[5], inst.c_matrix[0])
        np.testing.assert_array_equal(toks[8], inst.b_vec)
        np.testing.assert_array_equal(toks[9], [1.5, 1.2, 1.9, 0, 0])

    def test_x_init_deterministic(self):
        inst = generate_baseline(5, 3, "LC", 42)
        np.testing.assert_array_equal(tokenize_sequence(inst)[-1], tokenize_sequence(inst)[-1])

    def test_errors(self):
        with pytest.raises(QpValidationError, match="cannot embed d"):
            tokenize_sequence(generate_baseline(2, 3, "LC", 0))
        with pytest.raises(QpValidationError, match="defined for LC"):
            tokenize_sequence(generate_baseline(2, 0, "U", 0))


class TestMetrics:
    def test_perfect_prediction(self):
        truth = np.array([1.0, -2.0, 0.5])
        mse, nmse, (sse, sst) = metrics(truth, truth, np.zeros(3))
        assert mse == 0 and nmse == 0 and sse == 0 and sst == pytest.approx(5.25)

    def test_mean_predictor_has_zero_r2(self):
        rng = np.random.default_rng(0)
        truths = rng.standard_normal((20, 4))
        mean = truths.mean(axis=0)
        contribs = [metrics(mean, t, mean)[2] for t in truths]
        assert r2_score(contribs) == pytest.approx(0.0, abs=1e-12)

    def test_single_coordinate_error(self):
        truth = np.array([1.0, 2.0, 3.0, 4.0])
        eps = 0.3
        mse, nmse, _ = metrics(truth + [eps, 0, 0, 0], truth, np.zeros(4))
        assert mse == pytest.approx(eps**2 / 4)
        assert nmse == pytest.approx(eps**2 / 30)

    def test_zero_truth_rejected(self):
        with pytest.raises(QpValidationError, match="NMSE"):
            metrics(np.ones(2), np.zeros(2), np.zeros(2))
