"""Fitting propensity-odds models on a pattern graph and assembling weights.

Two routes produce per-pattern weight components Q^r on complete cases:

* local: each node's odds against its parent patterns are fit on that
  node's own rows (entropy or tailored loss), then combined down the
  graph by the mixture recursion;
* sequential: nodes are processed source-first and each fit balances the
  node's rows directly against complete cases, carrying the already
  accumulated parent components as source-row multipliers.

The total weight of a complete case is the sum of its components over
all graph nodes (the complete pattern contributing 1), so weights are
always >= 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from .basis import BasisConfig, BasisSpec, build_basis, design_matrix
from .data import Dataset
from .errors import ConvergenceError, FitError
from .optim import (
    ETA_CAP,
    LossProblem,
    SolveResult,
    SolverOptions,
    cross_validate,
    minimize,
)
from .patterns import Pattern, PatternGraph

LambdaPolicy = float | str | Mapping  # a fixed value, "cv", or a per-model map


@dataclass
class OddsModel:
    """A fitted log-linear odds model for one node (or one parent edge)."""

    pattern: Pattern
    parent: Pattern | None  # None = odds against the pooled parent set
    spec: BasisSpec
    alpha: np.ndarray
    loss_kind: str
    lambda_used: float
    solve: SolveResult

    def odds(self, ds: Dataset, rows: np.ndarray, phi: np.ndarray | None = None) -> np.ndarray:
        if phi is None:
            phi = design_matrix(self.spec, ds, rows)
        eta = np.minimum(phi @ self.alpha, ETA_CAP)
        return np.exp(eta)


@dataclass
class OddsModels:
    """Fitted models keyed by node (type1) or by (node, parent) edge (type2/3)."""

    node: dict[Pattern, OddsModel] = field(default_factory=dict)
    edge: dict[tuple[Pattern, Pattern], OddsModel] = field(default_factory=dict)

    def lambda_by_node(self) -> dict[Pattern, float]:
        out = {r: m.lambda_used for r, m in self.node.items()}
        for (r, _), m in self.edge.items():
            out[r] = max(out.get(r, 0.0), m.lambda_used)
        return out

    def lambda_map(self) -> dict:
        """Exact per-model penalty levels, keyed the way the fitters expect."""
        out: dict = {r: m.lambda_used for r, m in self.node.items()}
        out.update({key: m.lambda_used for key, m in self.edge.items()})
        return out


@dataclass
class WeightSet:
    """Per-pattern weight components on complete rows; w is always their sum."""

    complete_rows: np.ndarray
    q: dict[Pattern, np.ndarray]
    method: str

    def __post_init__(self) -> None:
        n = self.complete_rows.size
        for r, arr in self.q.items():
            if arr.shape != (n,):
                raise FitError(f"component for {r} has wrong length")

    @property
    def w(self) -> np.ndarray:
        total = np.zeros(self.complete_rows.size)
        for arr in self.q.values():
            total = total + arr
        return total

    @property
    def patterns(self) -> list[Pattern]:
        return sorted(self.q, key=str)


def _cv_seed(seed: int, position: int) -> int:
    return int(np.random.SeedSequence((seed, position)).generate_state(1)[0])


def _resolve_lambda(
    problem: LossProblem,
    policy: LambdaPolicy,
    seed: int,
    opts: SolverOptions,
    k_folds: int,
    key=None,
) -> float:
    if isinstance(policy, str):
        if policy != "cv":
            raise FitError(f"lambda policy must be 'cv' or a number, got {policy!r}")
        return cross_validate(problem, k_folds=k_folds, seed=seed, opts=opts).lambda_hat
    if isinstance(policy, Mapping):
        if key not in policy:
            raise FitError(f"lambda map has no entry for {key!r}")
        return float(policy[key])
    try:
        lam = float(policy)
    except (TypeError, ValueError):
        raise FitError(f"lambda policy must be 'cv' or a number, got {policy!r}") from None
    if lam < 0:
        raise FitError("a fixed penalty level must be nonnegative")
    return lam


def _solve_or_raise(problem: LossProblem, lam: float, opts: SolverOptions, label: str) -> SolveResult:
    res = minimize(problem, lam, opts)
    if not res.converged:
        raise ConvergenceError(
            f"odds fit for {label} did not converge "
            f"(kkt residual {res.kkt_residual:.2e} after {res.iterations} iterations)"
        )
    return res


def _stacked_problem(
    kind: str,
    phi_src: np.ndarray,
    phi_tgt: np.ndarray,
    t: np.ndarray,
    n_total: float,
    multiplier_src: np.ndarray | None = None,
) -> LossProblem:
    design = np.concatenate([phi_src, phi_tgt], axis=0)
    is_source = np.zeros(design.shape[0], dtype=bool)
    is_source[: phi_src.shape[0]] = True
    mult = np.ones(design.shape[0])
    if multiplier_src is not None:
        mult[: phi_src.shape[0]] = multiplier_src
    return LossProblem(
        kind=kind,
        design=design,
        is_source=is_source,
        t=t,
        n_total=n_total,
        multiplier=mult,
    )


def fit_local(
    g: PatternGraph,
    ds: Dataset,
    basis_cfg: BasisConfig = BasisConfig(),
    loss_kind: str = "tailored",
    lambda_policy: LambdaPolicy = "cv",
    opts: SolverOptions = SolverOptions(),
    seed: int = 0,
    k_folds: int = 5,
) -> OddsModels:
    """Fit every node's odds model on its own rows against its parents' rows.

    Type1 nodes pool the parent rows into a single source sample; type2
    and type3 nodes get one pairwise model per parent edge.
    """
    if loss_kind not in ("entropy", "tailored"):
        raise FitError("local fitting uses the 'entropy' or 'tailored' loss")
    models = OddsModels()
    for pos, r in enumerate(g.processing_order()):
        tgt_rows = ds.rows_for(r)
        if tgt_rows.size == 0:
            raise FitError(f"no observations with pattern {r}")
        spec = build_basis(ds, r, basis_cfg)
        phi_tgt = design_matrix(spec, ds, tgt_rows)
        ct = g.coeff_type_of(r)
        if ct == "type1":
            parent_rows = np.concatenate([ds.rows_for(s) for s in g.parents(r)])
            parent_rows.sort()
            if parent_rows.size == 0:
                raise FitError(f"no observations in the parent set of pattern {r}")
            phi_src = design_matrix(spec, ds, parent_rows)
            problem = _stacked_problem(loss_kind, phi_src, phi_tgt, spec.t, ds.n)
            lam = _resolve_lambda(problem, lambda_policy, _cv_seed(seed, pos), opts, k_folds, key=r)
            res = _solve_or_raise(problem, lam, opts, f"pattern {r}")
            models.node[r] = OddsModel(
                pattern=r,
                parent=None,
                spec=spec,
                alpha=res.alpha,
                loss_kind=loss_kind,
                lambda_used=lam,
                solve=res,
            )
        else:
            for sub, s in enumerate(g.parents(r)):
                src_rows = ds.rows_for(s)
                if src_rows.size == 0:
                    raise FitError(
                        f"no observations with pattern {s}, required as a parent of {r}"
                    )
                phi_src = design_matrix(spec, ds, src_rows)
                problem = _stacked_problem(loss_kind, phi_src, phi_tgt, spec.t, ds.n)
                lam = _resolve_lambda(
                    problem, lambda_policy, _cv_seed(seed, pos * 64 + sub + 1), opts, k_folds,
                    key=(r, s),
                )
                res = _solve_or_raise(problem, lam, opts, f"edge {s}->{r}")
                models.edge[(r, s)] = OddsModel(
                    pattern=r,
                    parent=s,
                    spec=spec,
                    alpha=res.alpha,
                    loss_kind=loss_kind,
                    lambda_used=lam,
                    solve=res,
                )
    return models


def combine_q(
    g: PatternGraph,
    node_odds: Mapping[Pattern, np.ndarray],
    edge_odds: Mapping[tuple[Pattern, Pattern], np.ndarray] | None = None,
    pattern_counts: Mapping[Pattern, int] | None = None,
    n_rows: int | None = None,
) -> dict[Pattern, np.ndarray]:
    """Propagate odds down the graph into per-pattern components Q^r.

    ``node_odds`` feeds type1 nodes (odds against the pooled parent set);
    ``edge_odds`` feeds type2/type3 nodes per parent edge.  Type2 nodes
    weight parents by empirical pattern counts.  ``n_rows`` sizes the
    source component; it is only required when the graph has no
    non-source nodes, where no odds array exists to infer it from.
    """
    edge_odds = edge_odds or {}
    order = g.processing_order()
    if n_rows is None:
        sizes = [arr.shape[0] for arr in node_odds.values()]
        sizes += [arr.shape[0] for arr in edge_odds.values()]
        if not sizes:
            raise FitError("combine_q needs n_rows when no odds arrays are given")
        n_rows = sizes[0]
    n = n_rows
    q: dict[Pattern, np.ndarray] = {g.source: np.ones(n)}
    for r in order:
        parents = g.parents(r)
        if not parents:
            raise FitError(f"pattern {r} has no parents; validate the graph first")
        ct = g.coeff_type_of(r)
        if ct == "type1":
            base = np.zeros(n)
            for s in parents:
                base = base + q[s]
            q[r] = node_odds[r] * base
        elif ct == "type2":
            if pattern_counts is None:
                raise FitError(f"type2 node {r} needs empirical pattern counts")
            n_pa = sum(pattern_counts.get(s, 0) for s in parents)
            if n_pa == 0:
                raise FitError(f"type2 node {r}: no observations in its parent set")
            acc = np.zeros(n)
            for s in parents:
                acc = acc + (pattern_counts.get(s, 0) / n_pa) * edge_odds[(r, s)] * q[s]
            q[r] = acc
        else:
            consts = g.type3_constants[r]
            acc = np.zeros(n)
            for s in parents:
                acc = acc + consts[s] * edge_odds[(r, s)] * q[s]
            q[r] = acc
    return q


def assemble_local_weights(models: OddsModels, g: PatternGraph, ds: Dataset) -> WeightSet:
    """Evaluate locally fitted odds on complete cases and run the recursion."""
    complete = ds.complete_rows
    if complete.size == 0:
        raise FitError("cannot assemble weights: no complete cases")
    phi_cache: dict[Pattern, np.ndarray] = {}

    def phi_for(model: OddsModel) -> np.ndarray:
        if model.pattern not in phi_cache:
            phi_cache[model.pattern] = design_matrix(model.spec, ds, complete)
        return phi_cache[model.pattern]

    node_odds = {r: m.odds(ds, complete, phi_for(m)) for r, m in models.node.items()}
    edge_odds = {key: m.odds(ds, complete, phi_for(m)) for key, m in models.edge.items()}
    q = combine_q(g, node_odds, edge_odds, ds.pattern_counts(), n_rows=complete.size)
    return WeightSet(complete_rows=complete, q=q, method="local")


def fit_sequential(
    g: PatternGraph,
    ds: Dataset,
    basis_cfg: BasisConfig = BasisConfig(),
    lambda_policy: LambdaPolicy = "cv",
    opts: SolverOptions = SolverOptions(),
    seed: int = 0,
    k_folds: int = 5,
) -> tuple[OddsModels, WeightSet]:
    """Source-first sequential fitting against complete cases.

    Each node's loss carries the accumulated parent components as source
    multipliers, so every fitted model balances its pattern's rows
    against the reweighted complete cases directly.  Only type1 mixture
    coefficients are supported on this route.
    """
    for r in g.non_source_nodes:
        if g.coeff_type_of(r) != "type1":
            raise FitError(
                f"sequential fitting supports type1 mixture coefficients only; "
                f"node {r} is {g.coeff_type_of(r)} (use local fitting instead)"
            )
    complete = ds.complete_rows
    if complete.size == 0:
        raise FitError("cannot fit sequentially: no complete cases")
    models = OddsModels()
    q: dict[Pattern, np.ndarray] = {g.source: np.ones(complete.size)}
    for pos, r in enumerate(g.processing_order()):
        tgt_rows = ds.rows_for(r)
        if tgt_rows.size == 0:
            raise FitError(f"no observations with pattern {r}")
        m_parent = np.zeros(complete.size)
        for s in g.parents(r):
            m_parent = m_parent + q[s]
        spec = build_basis(ds, r, basis_cfg)
        phi_src = design_matrix(spec, ds, complete)
        phi_tgt = design_matrix(spec, ds, tgt_rows)
        problem = _stacked_problem(
            "sequential", phi_src, phi_tgt, spec.t, ds.n, multiplier_src=m_parent
        )
        lam = _resolve_lambda(problem, lambda_policy, _cv_seed(seed, pos), opts, k_folds, key=r)
        res = _solve_or_raise(problem, lam, opts, f"pattern {r}")
        model = OddsModel(
            pattern=r,
            parent=None,
            spec=spec,
            alpha=res.alpha,
            loss_kind="sequential",
            lambda_used=lam,
            solve=res,
        )
        models.node[r] = model
        q[r] = model.odds(ds, complete, phi_src) * m_parent
    ws = WeightSet(complete_rows=complete, q=q, method="seq")
    return models, ws


WEIGHT_METHODS = ("cc", "entropy", "local", "seq")


def fit_weights_for_method(
    method: str,
    g: PatternGraph,
    ds: Dataset,
    basis_cfg: BasisConfig = BasisConfig(),
    lambda_policy: LambdaPolicy = "cv",
    opts: SolverOptions = SolverOptions(),
    seed: int = 0,
    k_folds: int = 5,
) -> tuple[OddsModels | None, WeightSet]:
    """Dispatch one named weighting method to its fitting route.

    ``cc`` returns unit weights on complete cases; ``entropy`` and
    ``local`` are locally fitted odds (entropy resp. tailored loss)
    combined by the recursion; ``seq`` is the sequential route.
    """
    if method == "cc":
        complete = ds.complete_rows
        if complete.size == 0:
            raise FitError("no complete cases")
        return None, WeightSet(
            complete_rows=complete, q={ds.complete_pattern: np.ones(complete.size)}, method="cc"
        )
    if method in ("entropy", "local"):
        loss = "entropy" if method == "entropy" else "tailored"
        models = fit_local(
            g, ds, basis_cfg, loss_kind=loss, lambda_policy=lambda_policy,
            opts=opts, seed=seed, k_folds=k_folds,
        )
        ws = assemble_local_weights(models, g, ds)
        ws.method = method
        return models, ws
    if method == "seq":
        return fit_sequential(
            g, ds, basis_cfg, lambda_policy=lambda_policy, opts=opts, seed=seed, k_folds=k_folds
        )
    raise FitError(f"unknown weighting method {method!r}; expected one of {WEIGHT_METHODS}")


def balance_report(
    ws: WeightSet,
    models: OddsModels,
    g: PatternGraph,
    ds: Dataset,
) -> pd.DataFrame:
    """Covariate balance per (pattern, basis term), with the penalty slack bound.

    Both sides are normalized by the full dataset size: the target mean
    sums the term over the pattern's own rows, the source mean sums the
    pattern's weight component times the term over complete cases.
    """
    lam_by_node = models.lambda_by_node()
    spec_by_node: dict[Pattern, BasisSpec] = {r: m.spec for r, m in models.node.items()}
    for (r, _), m in models.edge.items():
        spec_by_node.setdefault(r, m.spec)
    complete = ws.complete_rows
    rows = []
    for r in g.processing_order():
        if r not in spec_by_node or r not in ws.q:
            continue
        spec = spec_by_node[r]
        phi_c = design_matrix(spec, ds, complete)
        phi_t = design_matrix(spec, ds, ds.rows_for(r))
        tgt_mean = phi_t.sum(axis=0) / ds.n
        src_mean = (ws.q[r][:, None] * phi_c).sum(axis=0) / ds.n
        lam = lam_by_node.get(r, 0.0)
        for k, name in enumerate(spec.term_names):
            rows.append(
                {
                    "pattern": str(r),
                    "term": name,
                    "target_mean": tgt_mean[k],
                    "source_mean": src_mean[k],
                    "gap": abs(tgt_mean[k] - src_mean[k]),
                    "slack": lam * float(spec.t[k]),
                }
            )
    return pd.DataFrame(rows, columns=["pattern", "term", "target_mean", "source_mean", "gap", "slack"])
