"""Odds fitting, the mixture recursion, and weight assembly.

The load-bearing checks are the exact mass identities of the sequential
route and the agreement of the recursion with explicit path sums.
"""

import numpy as np
import pytest

from seqbalance import ConvergenceError, FitError, Pattern, build_graph, ccmv_graph
from seqbalance.basis import BasisConfig
from seqbalance.optim import SolverOptions
from seqbalance.patterns import graph_from_dict
from seqbalance.weights import (
    WEIGHT_METHODS,
    WeightSet,
    assemble_local_weights,
    balance_report,
    combine_q,
    fit_local,
    fit_sequential,
    fit_weights_for_method,
)

from .conftest import make_masked_dataset
from .oracles import path_sum_components, random_regular_graph

FAST = SolverOptions()
LAM = 0.01


class TestCombineQ:
    def test_chain_is_a_product(self, g_chain3):
        n = 4
        rng = np.random.default_rng(0)
        o110 = rng.uniform(0.5, 2.0, n)
        o100 = rng.uniform(0.5, 2.0, n)
        q = combine_q(
            g_chain3,
            {Pattern.parse("110"): o110, Pattern.parse("100"): o100},
        )
        np.testing.assert_allclose(q[Pattern.parse("110")], o110)
        np.testing.assert_allclose(q[Pattern.parse("100")], o100 * o110)
        np.testing.assert_array_equal(q[g_chain3.source], np.ones(n))

    def test_source_only_graph_needs_explicit_length(self):
        g = build_graph(2, [])
        with pytest.raises(FitError, match="n_rows"):
            combine_q(g, {})
        q = combine_q(g, {}, n_rows=5)
        np.testing.assert_array_equal(q[g.source], np.ones(5))

    def test_two_paths_add(self, g_twopath3):
        n = 3
        rng = np.random.default_rng(1)
        o110 = rng.uniform(0.5, 2.0, n)
        o100 = rng.uniform(0.5, 2.0, n)
        q = combine_q(
            g_twopath3,
            {Pattern.parse("110"): o110, Pattern.parse("100"): o100},
        )
        np.testing.assert_allclose(q[Pattern.parse("100")], o100 * (1.0 + o110))

    def test_matches_path_sum_oracle_on_random_graphs(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            d, nodes, edges = random_regular_graph(rng)
            g = graph_from_dict(
                {"d": d, "nodes": nodes, "edges": [list(e) for e in edges]}
            )
            n = 6
            odds = {
                node: rng.uniform(0.3, 2.5, n)
                for node in nodes
                if node != "1" * d
            }
            q = combine_q(
                g, {Pattern.parse(k): v for k, v in odds.items()}
            )
            expected = path_sum_components(edges, "1" * d, nodes, odds)
            for node in nodes:
                np.testing.assert_allclose(
                    q[Pattern.parse(node)], expected[node], rtol=1e-12
                )

    def test_type2_weights_parents_by_counts(self, g_forked3_type2):
        n = 2
        rng = np.random.default_rng(2)
        counts = {
            Pattern.parse("111"): 40,
            Pattern.parse("110"): 30,
            Pattern.parse("101"): 10,
            Pattern.parse("010"): 15,
            Pattern.parse("100"): 5,
        }
        edge_odds = {}
        for r in g_forked3_type2.non_source_nodes:
            for s in g_forked3_type2.parents(r):
                edge_odds[(r, s)] = rng.uniform(0.5, 2.0, n)
        q = combine_q(g_forked3_type2, {}, edge_odds, counts)
        p = Pattern.parse
        q110 = edge_odds[(p("110"), p("111"))] * 1.0
        q101 = edge_odds[(p("101"), p("111"))] * 1.0
        np.testing.assert_allclose(q[p("110")], q110)
        # 100 has parents 101 (10 rows) and 110 (30 rows)
        expected_100 = (
            10 / 40 * edge_odds[(p("100"), p("101"))] * q101
            + 30 / 40 * edge_odds[(p("100"), p("110"))] * q110
        )
        np.testing.assert_allclose(q[p("100")], expected_100)

    def test_type2_needs_counts(self, g_forked3_type2):
        with pytest.raises(FitError, match="empirical pattern counts"):
            combine_q(g_forked3_type2, {}, {(r, s): np.ones(1) for r in g_forked3_type2.non_source_nodes for s in g_forked3_type2.parents(r)})

    def test_type2_zero_parent_count(self, g_forked3_type2):
        edge_odds = {
            (r, s): np.ones(1)
            for r in g_forked3_type2.non_source_nodes
            for s in g_forked3_type2.parents(r)
        }
        counts = {Pattern.parse("111"): 0}
        with pytest.raises(FitError, match="no observations in its parent set"):
            combine_q(g_forked3_type2, {}, edge_odds, counts)

    def test_type3_uses_fixed_constants(self, g_forked3_type3):
        n = 3
        rng = np.random.default_rng(3)
        p = Pattern.parse
        edge_odds = {
            (r, s): rng.uniform(0.5, 2.0, n)
            for r in g_forked3_type3.non_source_nodes
            for s in g_forked3_type3.parents(r)
        }
        q = combine_q(g_forked3_type3, {}, edge_odds)
        q110 = edge_odds[(p("110"), p("111"))]
        q101 = edge_odds[(p("101"), p("111"))]
        expected_100 = (
            0.5 * edge_odds[(p("100"), p("101"))] * q101
            + 0.5 * edge_odds[(p("100"), p("110"))] * q110
        )
        np.testing.assert_allclose(q[p("100")], expected_100)

    def test_weights_are_at_least_one(self, g_forked3):
        rng = np.random.default_rng(4)
        n = 50
        odds = {
            r: rng.uniform(0.01, 5.0, n) for r in g_forked3.non_source_nodes
        }
        q = combine_q(g_forked3, odds)
        w = sum(q.values())
        assert np.all(w >= 1.0)


class TestSequentialRoute:
    def test_mass_identity_per_pattern(self, g_forked3, small_forked_dataset):
        ds = small_forked_dataset
        _, ws = fit_sequential(g_forked3, ds, lambda_policy=LAM, opts=FAST)
        counts = ds.pattern_counts()
        for r in g_forked3.non_source_nodes:
            assert ws.q[r].sum() == pytest.approx(counts[r], abs=1e-8 * ds.n)

    def test_total_mass_is_n(self, g_forked3, small_forked_dataset):
        ds = small_forked_dataset
        _, ws = fit_sequential(g_forked3, ds, lambda_policy=LAM, opts=FAST)
        assert ws.w.sum() == pytest.approx(ds.n, abs=1e-6 * ds.n)

    def test_weights_at_least_one(self, g_forked3, small_forked_dataset):
        _, ws = fit_sequential(
            g_forked3, small_forked_dataset, lambda_policy=LAM, opts=FAST
        )
        assert np.all(ws.w >= 1.0 - 1e-12)

    def test_components_multiply_parent_mass(self, g_forked3, small_forked_dataset):
        ds = small_forked_dataset
        models, ws = fit_sequential(g_forked3, ds, lambda_policy=LAM, opts=FAST)
        p100 = Pattern.parse("100")
        m_parent = ws.q[Pattern.parse("101")] + ws.q[Pattern.parse("110")]
        odds = models.node[p100].odds(ds, ws.complete_rows)
        np.testing.assert_allclose(ws.q[p100], odds * m_parent, rtol=1e-12)

    def test_balance_gap_bounded_by_slack(self, g_forked3, small_forked_dataset):
        ds = small_forked_dataset
        models, ws = fit_sequential(g_forked3, ds, lambda_policy=LAM, opts=FAST)
        frame = balance_report(ws, models, g_forked3, ds)
        # per-pattern term counts: 110 and 101 have 8, 010 has 7, 100 has 2
        assert len(frame) == 8 + 8 + 7 + 2
        assert (frame["gap"] <= frame["slack"] + 2e-6).all()

    def test_rejects_non_type1(self, g_forked3_type2, small_forked_dataset):
        with pytest.raises(FitError, match="type1 mixture coefficients only"):
            fit_sequential(
                g_forked3_type2, small_forked_dataset, lambda_policy=LAM
            )

    def test_missing_pattern_rows(self, g_forked3):
        rng = np.random.default_rng(0)
        ds = make_masked_dataset(rng, 300, build_graph(3, [("111", "110")]))
        with pytest.raises(FitError, match="no observations with pattern"):
            fit_sequential(g_forked3, ds, lambda_policy=LAM)

    def test_loss_kind_recorded(self, g_forked3, small_forked_dataset):
        models, _ = fit_sequential(
            g_forked3, small_forked_dataset, lambda_policy=LAM, opts=FAST
        )
        assert all(m.loss_kind == "sequential" for m in models.node.values())


class TestLocalRoute:
    def test_ccmv_mass_identity(self, g_ccmv3):
        rng = np.random.default_rng(9)
        ds = make_masked_dataset(rng, 700, ccmv_graph(3, ["111", "110", "101", "010", "100"]))
        g = g_ccmv3
        models = fit_local(g, ds, loss_kind="tailored", lambda_policy=LAM, opts=FAST)
        ws = assemble_local_weights(models, g, ds)
        counts = ds.pattern_counts()
        for r in g.non_source_nodes:
            assert ws.q[r].sum() == pytest.approx(counts[r], abs=1e-8 * ds.n)

    def test_ccmv_local_equals_sequential(self, g_ccmv3):
        # with the complete pattern as sole parent the two routes solve the
        # same stacked problems, so the weights must agree exactly
        rng = np.random.default_rng(10)
        ds = make_masked_dataset(rng, 500, g_ccmv3)
        models = fit_local(g_ccmv3, ds, loss_kind="tailored", lambda_policy=LAM, opts=FAST)
        ws_local = assemble_local_weights(models, g_ccmv3, ds)
        _, ws_seq = fit_sequential(g_ccmv3, ds, lambda_policy=LAM, opts=FAST)
        for r in ws_local.q:
            np.testing.assert_allclose(ws_local.q[r], ws_seq.q[r], atol=1e-9)

    def test_forked_all_patterns_present(self, g_forked3, small_forked_dataset):
        models = fit_local(
            g_forked3, small_forked_dataset, lambda_policy=LAM, opts=FAST
        )
        ws = assemble_local_weights(models, g_forked3, small_forked_dataset)
        assert set(ws.q) == set(g_forked3.nodes)
        assert np.all(ws.w >= 1.0 - 1e-12)

    def test_entropy_loss_route(self, g_forked3, small_forked_dataset):
        models = fit_local(
            g_forked3,
            small_forked_dataset,
            loss_kind="entropy",
            lambda_policy=LAM,
            opts=FAST,
        )
        ws = assemble_local_weights(models, g_forked3, small_forked_dataset)
        assert np.all(np.isfinite(ws.w)) and np.all(ws.w >= 1.0 - 1e-12)

    def test_rejects_sequential_loss(self, g_forked3, small_forked_dataset):
        with pytest.raises(FitError, match="'entropy' or 'tailored'"):
            fit_local(g_forked3, small_forked_dataset, loss_kind="sequential")

    def test_type2_fits_per_edge(self, g_forked3_type2, small_forked_dataset):
        models = fit_local(
            g_forked3_type2, small_forked_dataset, lambda_policy=LAM, opts=FAST
        )
        p = Pattern.parse
        assert not models.node
        assert set(models.edge) == {
            (p("110"), p("111")),
            (p("101"), p("111")),
            (p("010"), p("110")),
            (p("010"), p("111")),
            (p("100"), p("101")),
            (p("100"), p("110")),
        }
        ws = assemble_local_weights(models, g_forked3_type2, small_forked_dataset)
        assert np.all(ws.w >= 1.0 - 1e-12)

    def test_lambda_maps(self, g_forked3_type2, small_forked_dataset):
        models = fit_local(
            g_forked3_type2, small_forked_dataset, lambda_policy=LAM, opts=FAST
        )
        lam_map = models.lambda_map()
        assert all(v == LAM for v in lam_map.values())
        assert all(isinstance(k, tuple) for k in lam_map)
        by_node = models.lambda_by_node()
        assert set(by_node) == set(g_forked3_type2.non_source_nodes)


class TestLambdaPolicies:
    def test_fixed_value(self, g_chain3):
        rng = np.random.default_rng(12)
        ds = make_masked_dataset(rng, 400, g_chain3)
        models, _ = fit_sequential(g_chain3, ds, lambda_policy=0.5, opts=FAST)
        assert all(m.lambda_used == 0.5 for m in models.node.values())

    def test_negative_fixed_value_rejected(self, g_chain3, small_forked_dataset):
        with pytest.raises(FitError, match="nonnegative"):
            fit_sequential(g_chain3, small_forked_dataset, lambda_policy=-1.0)

    def test_unknown_string_rejected(self, g_chain3, small_forked_dataset):
        with pytest.raises(FitError, match="must be 'cv' or a number"):
            fit_sequential(g_chain3, small_forked_dataset, lambda_policy="auto")

    def test_mapping_policy(self, g_chain3):
        rng = np.random.default_rng(13)
        ds = make_masked_dataset(rng, 400, g_chain3)
        p = Pattern.parse
        policy = {p("110"): 0.2, p("100"): 0.05}
        models, _ = fit_sequential(g_chain3, ds, lambda_policy=policy, opts=FAST)
        assert models.node[p("110")].lambda_used == 0.2
        assert models.node[p("100")].lambda_used == 0.05

    def test_mapping_missing_key(self, g_chain3):
        rng = np.random.default_rng(14)
        ds = make_masked_dataset(rng, 400, g_chain3)
        with pytest.raises(FitError, match="no entry for"):
            fit_sequential(
                g_chain3, ds, lambda_policy={Pattern.parse("110"): 0.1}
            )

    def test_cv_policy_runs(self):
        g = ccmv_graph(2, ["11", "10"])
        rng = np.random.default_rng(15)
        n = 240
        x = rng.normal(size=(n, 2))
        mask = np.ones((n, 2), dtype=bool)
        mask[rng.uniform(size=n) < 0.4, 1] = False
        ds_vals = np.where(mask, x, np.nan)
        from seqbalance import from_arrays

        ds = from_arrays(ds_vals, mask, ["a", "b"], ["continuous", "continuous"])
        models, ws = fit_sequential(g, ds, lambda_policy="cv", seed=3, opts=FAST)
        lam = models.node[Pattern.parse("10")].lambda_used
        assert lam > 0
        assert np.all(ws.w >= 1.0 - 1e-12)

    def test_cv_deterministic_in_seed(self, g_chain3):
        rng = np.random.default_rng(16)
        ds = make_masked_dataset(rng, 300, g_chain3)
        m1, ws1 = fit_sequential(g_chain3, ds, lambda_policy="cv", seed=7, opts=FAST)
        m2, ws2 = fit_sequential(g_chain3, ds, lambda_policy="cv", seed=7, opts=FAST)
        for r in m1.node:
            assert m1.node[r].lambda_used == m2.node[r].lambda_used
        np.testing.assert_array_equal(ws1.w, ws2.w)


class TestDispatch:
    def test_method_names(self):
        assert WEIGHT_METHODS == ("cc", "entropy", "local", "seq")

    def test_cc_unit_weights(self, g_forked3, small_forked_dataset):
        ds = small_forked_dataset
        models, ws = fit_weights_for_method("cc", g_forked3, ds)
        assert models is None
        assert ws.method == "cc"
        assert list(ws.q) == [ds.complete_pattern]
        np.testing.assert_array_equal(ws.w, np.ones(ds.complete_rows.size))

    @pytest.mark.parametrize("method", ["entropy", "local", "seq"])
    def test_fitted_methods_label_weightset(self, method, g_forked3, small_forked_dataset):
        models, ws = fit_weights_for_method(
            method, g_forked3, small_forked_dataset, lambda_policy=LAM, opts=FAST
        )
        assert ws.method == method
        assert models is not None
        assert np.all(ws.w >= 1.0 - 1e-12)

    def test_unknown_method(self, g_forked3, small_forked_dataset):
        with pytest.raises(FitError, match="unknown weighting method"):
            fit_weights_for_method("ipw", g_forked3, small_forked_dataset)

    @pytest.mark.parametrize("method", ["entropy", "local", "seq"])
    def test_source_only_graph_gives_unit_weights(self, method):
        # no incomplete patterns: nothing to fit, every weight is one
        from seqbalance import from_arrays

        rng = np.random.default_rng(3)
        vals = rng.standard_normal((40, 2))
        mask = np.ones((40, 2), dtype=bool)
        ds = from_arrays(vals, mask, ["a", "b"], ["continuous", "continuous"])
        g = build_graph(2, [])
        models, ws = fit_weights_for_method(method, g, ds, lambda_policy=LAM, opts=FAST)
        np.testing.assert_array_equal(ws.w, np.ones(40))

    def test_same_seed_reproduces(self, g_forked3, small_forked_dataset):
        _, a = fit_weights_for_method(
            "seq", g_forked3, small_forked_dataset, lambda_policy=LAM, opts=FAST, seed=5
        )
        _, b = fit_weights_for_method(
            "seq", g_forked3, small_forked_dataset, lambda_policy=LAM, opts=FAST, seed=5
        )
        np.testing.assert_array_equal(a.w, b.w)


class TestWeightSet:
    def test_component_length_checked(self):
        with pytest.raises(FitError, match="wrong length"):
            WeightSet(
                complete_rows=np.arange(3),
                q={Pattern.parse("11"): np.ones(2)},
                method="cc",
            )

    def test_w_sums_components(self):
        p = Pattern.parse
        ws = WeightSet(
            complete_rows=np.arange(2),
            q={p("11"): np.ones(2), p("10"): np.array([0.5, 1.5])},
            method="seq",
        )
        np.testing.assert_allclose(ws.w, [1.5, 2.5])
        assert [str(x) for x in ws.patterns] == ["10", "11"]
