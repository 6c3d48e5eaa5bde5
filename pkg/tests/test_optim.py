"""Loss functions and the proximal solver, checked against finite
differences, a damped Newton oracle, and closed-form intercepts."""

import logging
import math

import numpy as np
import pytest

from seqbalance import FitError
from seqbalance.optim import (
    ETA_CAP,
    CvResult,
    LossProblem,
    SolverOptions,
    _capped_exp,
    cross_validate,
    default_grid,
    kkt_residual,
    lambda_max,
    loss_value,
    loss_value_grad,
    minimize,
    objective,
    prox_l1,
)

from .oracles import finite_diff_grad, newton_smooth


def make_problem(kind, seed=0, m_src=80, m_tgt=50, k=5, with_mult=False, n_total=None):
    rng = np.random.default_rng(seed)
    design = np.column_stack(
        [np.ones(m_src + m_tgt), rng.normal(0, 0.8, size=(m_src + m_tgt, k - 1))]
    )
    is_source = np.zeros(m_src + m_tgt, dtype=bool)
    is_source[:m_src] = True
    t = np.concatenate([[0.0], rng.uniform(0.5, 2.0, size=k - 1)])
    mult = None
    if with_mult:
        mult = np.ones(m_src + m_tgt)
        mult[:m_src] = rng.uniform(0.5, 3.0, size=m_src)
    return LossProblem(
        kind=kind,
        design=design,
        is_source=is_source,
        t=t,
        n_total=float(m_src + m_tgt) if n_total is None else n_total,
        multiplier=mult,
    )


class TestProblemValidation:
    def test_unknown_kind(self):
        with pytest.raises(FitError, match="loss kind"):
            make_problem("logit")

    def test_multiplier_must_be_one_on_targets(self):
        rng = np.random.default_rng(0)
        with pytest.raises(FitError, match="equal 1 on target rows"):
            LossProblem(
                kind="sequential",
                design=rng.normal(size=(4, 2)),
                is_source=np.array([True, True, False, False]),
                t=np.array([0.0, 1.0]),
                n_total=4.0,
                multiplier=np.array([2.0, 2.0, 1.0, 0.5]),
            )

    def test_negative_multiplier_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(FitError, match="nonnegative"):
            LossProblem(
                kind="sequential",
                design=rng.normal(size=(3, 2)),
                is_source=np.array([True, True, False]),
                t=np.array([0.0, 1.0]),
                n_total=3.0,
                multiplier=np.array([-1.0, 1.0, 1.0]),
            )

    def test_negative_penalty_rejected(self):
        with pytest.raises(FitError, match="nonnegative"):
            LossProblem(
                kind="entropy",
                design=np.ones((2, 1)),
                is_source=np.array([True, False]),
                t=np.array([-1.0]),
                n_total=2.0,
            )

    def test_n_total_positive(self):
        with pytest.raises(FitError, match="n_total"):
            LossProblem(
                kind="entropy",
                design=np.ones((2, 1)),
                is_source=np.array([True, False]),
                t=np.array([0.0]),
                n_total=0.0,
            )

    def test_shape_mismatches(self):
        with pytest.raises(FitError, match="is_source"):
            LossProblem(
                kind="entropy",
                design=np.ones((3, 1)),
                is_source=np.array([True, False]),
                t=np.array([0.0]),
                n_total=3.0,
            )
        with pytest.raises(FitError, match="penalty scale length"):
            LossProblem(
                kind="entropy",
                design=np.ones((2, 1)),
                is_source=np.array([True, False]),
                t=np.array([0.0, 1.0]),
                n_total=2.0,
            )


class TestCappedExp:
    def test_exact_below_cap(self):
        eta = np.array([-5.0, 0.0, 10.0, ETA_CAP])
        val, der, capped = _capped_exp(eta)
        np.testing.assert_allclose(val, np.exp(eta))
        np.testing.assert_allclose(der, np.exp(eta))
        assert not capped

    def test_linear_above_cap(self):
        eta = np.array([ETA_CAP + 2.0])
        val, der, capped = _capped_exp(eta)
        assert capped
        assert val[0] == pytest.approx(math.exp(ETA_CAP) * 3.0)
        assert der[0] == pytest.approx(math.exp(ETA_CAP))

    def test_continuous_at_cap(self):
        lo = _capped_exp(np.array([ETA_CAP - 1e-9]))[0][0]
        hi = _capped_exp(np.array([ETA_CAP + 1e-9]))[0][0]
        assert hi == pytest.approx(lo, rel=1e-6)

    def test_warning_logged_once_per_eval(self, caplog):
        p = make_problem("tailored")
        big = np.zeros(p.n_coef)
        big[0] = ETA_CAP + 5.0
        with caplog.at_level(logging.WARNING, logger="seqbalance.optim"):
            loss_value(p, big)
        assert any("exceeded the cap" in rec.message for rec in caplog.records)


class TestLossValues:
    def test_entropy_matches_direct_sum(self):
        p = make_problem("entropy", seed=1)
        rng = np.random.default_rng(2)
        alpha = rng.normal(0, 0.5, size=p.n_coef)
        eta = p.design @ alpha
        expected = 0.0
        for e, s in zip(eta, p.is_source):
            expected += math.log1p(math.exp(e)) if s else math.log1p(math.exp(-e))
        assert loss_value(p, alpha) == pytest.approx(expected / p.n_total, rel=1e-12)

    def test_tailored_matches_direct_sum(self):
        p = make_problem("tailored", seed=3)
        rng = np.random.default_rng(4)
        alpha = rng.normal(0, 0.3, size=p.n_coef)
        eta = p.design @ alpha
        expected = sum(
            math.exp(e) if s else -e for e, s in zip(eta, p.is_source)
        )
        assert loss_value(p, alpha) == pytest.approx(expected / p.n_total, rel=1e-12)

    def test_sequential_scales_sources_by_multiplier(self):
        p = make_problem("sequential", seed=5, with_mult=True)
        rng = np.random.default_rng(6)
        alpha = rng.normal(0, 0.3, size=p.n_coef)
        eta = p.design @ alpha
        expected = sum(
            m * math.exp(e) if s else -e
            for e, s, m in zip(eta, p.is_source, p.multiplier)
        )
        assert loss_value(p, alpha) == pytest.approx(expected / p.n_total, rel=1e-12)

    @pytest.mark.parametrize(
        "kind,with_mult",
        [("entropy", False), ("tailored", False), ("sequential", True)],
    )
    def test_gradient_matches_finite_differences(self, kind, with_mult):
        p = make_problem(kind, seed=8, with_mult=with_mult)
        rng = np.random.default_rng(9)
        for _ in range(3):
            alpha = rng.normal(0, 0.4, size=p.n_coef)
            _, grad = loss_value_grad(p, alpha)
            fd = finite_diff_grad(lambda a: loss_value(p, a), alpha)
            np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-8)

    def test_normalizer_is_fixed_not_row_count(self):
        p1 = make_problem("tailored", seed=10)
        p2 = make_problem("tailored", seed=10, n_total=1000.0)
        alpha = np.full(p1.n_coef, 0.1)
        ratio = loss_value(p1, alpha) / loss_value(p2, alpha)
        assert ratio == pytest.approx(1000.0 / p1.design.shape[0], rel=1e-12)


class TestProx:
    def test_soft_threshold_values(self):
        v = np.array([3.0, -3.0, 0.5, -0.5, 0.0])
        t = np.ones(5)
        out = prox_l1(v, step=1.0, lam=1.0, t=t)
        np.testing.assert_allclose(out, [2.0, -2.0, 0.0, 0.0, 0.0])

    def test_zero_scale_passes_through(self):
        v = np.array([0.3, -0.2])
        out = prox_l1(v, step=1.0, lam=100.0, t=np.array([0.0, 1.0]))
        assert out[0] == 0.3 and out[1] == 0.0

    def test_scales_multiply(self):
        v = np.array([5.0])
        out = prox_l1(v, step=0.5, lam=2.0, t=np.array([3.0]))
        assert out[0] == pytest.approx(5.0 - 0.5 * 2.0 * 3.0)


class TestMinimize:
    @pytest.mark.parametrize("kind", ["entropy", "tailored"])
    def test_unpenalized_matches_newton_oracle(self, kind):
        p = make_problem(kind, seed=20, k=4)

        def fgh(a):
            val, g = loss_value_grad(p, a)
            eta = p.design @ a
            if kind == "entropy":
                from scipy.special import expit

                h_diag = expit(eta) * expit(-eta)
            else:
                h_diag = np.where(p.is_source, np.exp(np.clip(eta, None, ETA_CAP)), 0.0)
            hess = (p.design * h_diag[:, None]).T @ p.design / p.n_total
            return val, g, hess

        oracle = newton_smooth(fgh, np.zeros(p.n_coef))
        res = minimize(p, lam=0.0)
        assert res.converged
        np.testing.assert_allclose(res.alpha, oracle, atol=1e-4)
        # the objective gap is the sharp measure at the contracted kkt level
        gap = loss_value(p, res.alpha) - loss_value(p, oracle)
        assert -1e-12 <= gap <= 1e-10

    def test_huge_penalty_gives_closed_form_intercept(self):
        for kind, with_mult in [("entropy", False), ("tailored", False), ("sequential", True)]:
            p = make_problem(kind, seed=21, with_mult=with_mult)
            res = minimize(p, lam=1e6)
            assert res.converged
            np.testing.assert_allclose(res.alpha[1:], 0.0, atol=0)
            n_tgt = (~p.is_source).sum()
            denom = p.multiplier[p.is_source].sum()
            assert res.alpha[0] == pytest.approx(math.log(n_tgt / denom), abs=1e-9)

    def test_objective_never_increases(self):
        p = make_problem("tailored", seed=22)
        seen = []
        minimize(p, lam=0.01, callback=lambda i, a, f: seen.append(f))
        assert len(seen) >= 2
        diffs = np.diff(np.array(seen))
        assert np.all(diffs <= 0.0)

    def test_intercept_polished_to_machine_precision(self):
        p = make_problem("tailored", seed=23)
        res = minimize(p, lam=0.05)
        _, g = loss_value_grad(p, res.alpha)
        assert abs(g[0]) < 1e-12

    def test_kkt_residual_reported(self):
        p = make_problem("entropy", seed=24)
        res = minimize(p, lam=0.02)
        assert res.converged
        assert res.kkt_residual <= 1e-6
        assert res.kkt_residual == pytest.approx(
            kkt_residual(p, res.alpha, 0.02), abs=1e-15
        )

    def test_warm_start_converges_immediately(self):
        p = make_problem("tailored", seed=25)
        first = minimize(p, lam=0.03)
        again = minimize(p, lam=0.03, alpha0=first.alpha)
        assert again.iterations < first.iterations
        assert again.iterations <= 10
        # both stops lie within the kkt tolerance of the optimum
        np.testing.assert_allclose(again.alpha, first.alpha, atol=5e-5)
        assert objective(p, again.alpha, 0.03) <= objective(p, first.alpha, 0.03) + 1e-12

    def test_max_iter_reported_as_not_converged(self):
        p = make_problem("entropy", seed=26)
        res = minimize(p, lam=0.01, opts=SolverOptions(tol=1e-16, max_iter=2, kkt_tol=1e-12))
        assert res.iterations == 2
        assert not res.converged

    def test_objective_value_consistent(self):
        p = make_problem("entropy", seed=27)
        res = minimize(p, lam=0.02)
        assert res.objective == pytest.approx(objective(p, res.alpha, 0.02), rel=1e-12)


class TestLambdaMax:
    def test_threshold_behavior(self):
        p = make_problem("tailored", seed=30)
        lmax = lambda_max(p)
        above = minimize(p, lam=lmax * 1.001)
        np.testing.assert_allclose(above.alpha[1:], 0.0, atol=1e-10)
        below = minimize(p, lam=lmax * 0.8)
        assert np.abs(below.alpha[1:]).max() > 1e-6

    def test_grid_shape_and_range(self):
        p = make_problem("entropy", seed=31)
        grid = default_grid(p)
        assert grid.size == 40
        assert grid[0] == pytest.approx(lambda_max(p))
        assert grid[-1] == pytest.approx(grid[0] * 1e-4)
        assert np.all(np.diff(grid) < 0)


class TestCrossValidate:
    def test_basic_run(self):
        p = make_problem("tailored", seed=40, m_src=60, m_tgt=40)
        cv = cross_validate(p, k_folds=4, seed=1)
        assert isinstance(cv, CvResult)
        assert cv.lambda_hat in cv.lambdas
        assert cv.fold_scores.shape == (40, 4)
        assert cv.mean_scores.shape == (40,)
        np.testing.assert_allclose(cv.mean_scores, cv.fold_scores.mean(axis=1))

    def test_deterministic_given_seed(self):
        p = make_problem("entropy", seed=41, m_src=40, m_tgt=30)
        a = cross_validate(p, grid=[0.5, 0.05, 0.005], k_folds=3, seed=7)
        b = cross_validate(p, grid=[0.5, 0.05, 0.005], k_folds=3, seed=7)
        assert a.lambda_hat == b.lambda_hat
        np.testing.assert_array_equal(a.fold_scores, b.fold_scores)

    def test_too_few_rows_for_folds(self):
        p = make_problem("entropy", seed=42, m_src=3, m_tgt=30)
        with pytest.raises(FitError, match="cannot build 5 folds"):
            cross_validate(p, k_folds=5)

    def test_grid_must_be_positive(self):
        p = make_problem("entropy", seed=43)
        with pytest.raises(FitError, match="positive"):
            cross_validate(p, grid=[0.1, 0.0])

    def test_tie_goes_to_larger_lambda(self):
        # with only the unpenalized intercept every lambda fits identically,
        # so all scores tie and the largest grid value must win
        rng = np.random.default_rng(44)
        m = 60
        p = LossProblem(
            kind="tailored",
            design=np.ones((m, 1)),
            is_source=rng.uniform(size=m) < 0.5,
            t=np.array([0.0]),
            n_total=float(m),
        )
        cv = cross_validate(p, grid=[1.0, 0.1, 0.01], k_folds=3, seed=0)
        assert cv.lambda_hat == 1.0

    def test_descending_grid_order_in_result(self):
        p = make_problem("tailored", seed=45)
        cv = cross_validate(p, grid=[0.01, 1.0, 0.1], k_folds=3, seed=0)
        np.testing.assert_array_equal(cv.lambdas, [1.0, 0.1, 0.01])

    def test_subset_preserves_roles(self):
        p = make_problem("entropy", seed=46)
        rows = np.arange(0, p.design.shape[0], 2)
        sub = p.subset(rows, n_total=50.0)
        np.testing.assert_array_equal(sub.is_source, p.is_source[rows])
        assert sub.n_total == 50.0
