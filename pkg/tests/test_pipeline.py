"""End-to-end fit orchestration."""

import logging

import numpy as np
import pytest

from seqbalance import FitError
from seqbalance.optim import SolverOptions
from seqbalance.pipeline import FitSettings, run_fit

FAST = SolverOptions()


def settings(**kw):
    base = dict(
        outcome="y",
        predictors=("x1", "x2"),
        method="seq",
        lambda_policy=0.01,
        solver_opts=FAST,
    )
    base.update(kw)
    return FitSettings(**base)


class TestSettings:
    def test_variance_validated(self):
        with pytest.raises(FitError, match="variance"):
            settings(variance="jackknife")

    def test_defaults(self):
        s = FitSettings(outcome="y", predictors=("x1",))
        assert s.method == "seq"
        assert s.lambda_policy == "cv"
        assert s.variance == "sandwich"


class TestRunFit:
    def test_seq_sandwich(self, g_forked3, small_forked_dataset):
        art = run_fit(small_forked_dataset, g_forked3, settings())
        fit = art.fit
        assert fit.method == "seq"
        assert fit.variance_method == "sandwich"
        assert fit.parameter_names == ("intercept", "x1", "x2")
        assert fit.theta.shape == (3,)
        assert np.all(fit.se > 0)
        assert fit.n == small_forked_dataset.n
        assert fit.n_complete == small_forked_dataset.complete_rows.size
        assert set(fit.lambda_by_pattern) == {"010", "100", "101", "110"}
        assert len(art.balance) > 0
        assert fit.converged

    def test_cc_has_no_balance_or_lambdas(self, g_forked3, small_forked_dataset):
        art = run_fit(small_forked_dataset, g_forked3, settings(method="cc"))
        assert art.models is None
        assert len(art.balance) == 0
        assert art.fit.lambda_by_pattern == {}
        assert art.fit.variance_method == "sandwich"

    def test_bootstrap_variance(self, g_forked3, small_forked_dataset):
        art = run_fit(
            small_forked_dataset,
            g_forked3,
            settings(variance="bootstrap", bootstrap_reps=4, seed=3),
        )
        assert art.fit.variance_method == "bootstrap"
        assert np.all(np.isfinite(art.fit.se))

    def test_type2_graph_falls_back_to_bootstrap(
        self, g_forked3_type2, small_forked_dataset, caplog
    ):
        with caplog.at_level(logging.WARNING, logger="seqbalance.pipeline"):
            art = run_fit(
                small_forked_dataset,
                g_forked3_type2,
                settings(method="local", bootstrap_reps=3, seed=2),
            )
        assert art.fit.variance_method == "bootstrap"
        assert any("falling back to the bootstrap" in r.message for r in caplog.records)

    def test_point_estimate_unaffected_by_variance_choice(
        self, g_forked3, small_forked_dataset
    ):
        a = run_fit(small_forked_dataset, g_forked3, settings())
        b = run_fit(
            small_forked_dataset,
            g_forked3,
            settings(variance="bootstrap", bootstrap_reps=3),
        )
        np.testing.assert_allclose(a.fit.theta, b.fit.theta, atol=1e-12)

    def test_deterministic(self, g_forked3, small_forked_dataset):
        a = run_fit(small_forked_dataset, g_forked3, settings(seed=9))
        b = run_fit(small_forked_dataset, g_forked3, settings(seed=9))
        np.testing.assert_array_equal(a.fit.theta, b.fit.theta)
        np.testing.assert_array_equal(a.fit.cov, b.fit.cov)

    def test_unknown_column_raises(self, g_forked3, small_forked_dataset):
        from seqbalance import DataError

        with pytest.raises(DataError, match="no column named"):
            run_fit(
                small_forked_dataset, g_forked3, settings(predictors=("x1", "zz"))
            )
