"""Synthetic-data studies: generator, truth, and replication harness.

The default design has five coordinates (a binary outcome followed by
four truncated-normal covariates), a logistic outcome model, and a
missingness mechanism driven by per-node log-odds polynomials on an
eight-node pattern graph.  Missingness may depend on the outcome where
it is observed, so complete-case analysis is biased by construction.

Replicates draw from independent counter-based RNG streams keyed by
(seed, replicate index), so results are reproducible under any degree of
parallelism.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .basis import BasisConfig
from .data import Dataset, from_arrays
from .errors import ConfigError, FitError
from .estimator import EEProblem, newton_logistic, solve_weighted_ee
from .optim import SolverOptions
from .patterns import Pattern, PatternGraph, build_graph, ccmv_graph
from .weights import WeightSet, combine_q, fit_weights_for_method

DEFAULT_THETA = (3.0, -2.0, 1.0, 2.0, -1.0)
DEFAULT_ODDS_SEED = 20260401
TRUNCATION = 3.0
MAX_POLY_DEGREE = 4
ALL_METHODS = ("full", "cc", "true", "entropy", "local", "seq")
GRAPH_METHODS = ("entropy", "local", "seq")
# study defaults: per-pattern complete-row counts sit near 100 at n=1000,
# so the study uses a leaner spline basis and a firmer penalty than the
# general-purpose fit path
DEFAULT_STUDY_LAMBDA = 0.08
DEFAULT_STUDY_BASIS = BasisConfig(n_splines=4, degree=2)

# one polynomial term: (coefficient, per-coordinate exponents)
PolyTerm = tuple[float, tuple[int, ...]]
Polynomial = tuple[PolyTerm, ...]


def default_study_graph() -> PatternGraph:
    """The eight-node, five-coordinate graph used by the default study."""
    return build_graph(
        d=5,
        edges=[
            ("11111", "01111"),
            ("11111", "10111"),
            ("11111", "11110"),
            ("11111", "11001"),
            ("11111", "11010"),
            ("10111", "10110"),
            ("11110", "10110"),
            ("11110", "11010"),
            ("11001", "11000"),
            ("11010", "11000"),
        ],
    )


def pruned_study_graph() -> PatternGraph:
    """The default study graph with one direct edge removed (11111->11010)."""
    g = default_study_graph()
    edges = [(str(s), str(r)) for s, r in g.edges if (str(s), str(r)) != ("11111", "11010")]
    return build_graph(d=5, edges=edges)


def ccmv_study_graph() -> PatternGraph:
    """Complete-case anchored variant: every node's sole parent is 11111."""
    g = default_study_graph()
    return ccmv_graph(5, [str(r) for r in g.nodes])


def sensitivity_graphs() -> dict[str, PatternGraph]:
    """Graphs for the robustness sweep: g1 generating, g2 pruned, g3 ccmv."""
    return {"g1": default_study_graph(), "g2": pruned_study_graph(), "g3": ccmv_study_graph()}


def eval_polynomial(poly: Polynomial, values: np.ndarray) -> np.ndarray:
    """Evaluate sum_k c_k prod_j values[:, j] ** e_kj over the rows."""
    out = np.zeros(values.shape[0])
    for coef, powers in poly:
        term = np.full(values.shape[0], coef)
        for j, e in enumerate(powers):
            if e:
                term = term * values[:, j] ** e
        out += term
    return out


def _check_odds(graph: PatternGraph, odds: Mapping[Pattern, Polynomial]) -> None:
    for r in graph.non_source_nodes:
        if r not in odds:
            raise ConfigError(f"odds specification is missing node {r}")
        for coef, powers in odds[r]:
            if len(powers) != graph.d:
                raise ConfigError(f"odds term for {r} has {len(powers)} exponents, expected {graph.d}")
            if sum(powers) > MAX_POLY_DEGREE:
                raise ConfigError(f"odds term for {r} exceeds total degree {MAX_POLY_DEGREE}")
            if any(e > 0 and not r.observes(j) for j, e in enumerate(powers)):
                raise ConfigError(
                    f"odds term for {r} uses a coordinate the pattern does not observe"
                )


@dataclass(frozen=True)
class SimConfig:
    n: int = 1000
    reps: int = 100
    seed: int = 0
    theta: tuple[float, ...] = DEFAULT_THETA
    graph: PatternGraph = field(default_factory=default_study_graph)
    odds: Mapping[Pattern, Polynomial] = field(default_factory=dict)
    methods: tuple[str, ...] = ALL_METHODS
    basis_cfg: BasisConfig = DEFAULT_STUDY_BASIS
    solver_opts: SolverOptions = field(default_factory=SolverOptions)
    lambda_policy: float | str = DEFAULT_STUDY_LAMBDA
    k_folds: int = 5
    weight_cap: float = 1e6

    def __post_init__(self) -> None:
        if self.n < 1 or self.reps < 1:
            raise ConfigError("n and reps must be positive")
        if len(self.theta) != self.graph.d:
            raise ConfigError(
                f"theta has {len(self.theta)} entries but the design needs {self.graph.d} "
                "(intercept plus one slope per covariate)"
            )
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown method {m!r}; expected a subset of {ALL_METHODS}")
        _check_odds(self.graph, self.odds)


def truncated_normal(rng: np.random.Generator, size, bound: float = TRUNCATION) -> np.ndarray:
    """Standard normal draws conditioned on [-bound, bound] by rejection."""
    out = rng.standard_normal(size)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def _random_polynomial(
    r: Pattern, rng: np.random.Generator, d: int, scale: float
) -> list[PolyTerm]:
    """Draw a bounded-degree polynomial on the coordinates observed under r."""
    obs = list(r.observed_indices)
    terms: list[PolyTerm] = [(0.0, (0,) * d)]  # constant, set by calibration

    def powers(exponents: dict[int, int]) -> tuple[int, ...]:
        e = [0] * d
        for j, p in exponents.items():
            e[j] = p
        return tuple(e)

    for j in obs:
        if j == 0:
            # the binary outcome spans ~1 while covariates span 6; a boosted
            # sign-symmetric coefficient keeps missingness outcome-driven
            mag = scale * rng.uniform(1.5, 3.0)
            terms.append((mag if rng.uniform() < 0.5 else -mag, powers({j: 1})))
        else:
            terms.append((scale * rng.uniform(-1.0, 1.0), powers({j: 1})))
    j2 = obs[rng.integers(len(obs))]
    terms.append((0.5 * scale * rng.uniform(-1.0, 1.0), powers({j2: 2})))
    if len(obs) >= 2:
        ja, jb = rng.choice(len(obs), size=2, replace=False)
        terms.append(
            (0.5 * scale * rng.uniform(-1.0, 1.0), powers({obs[ja]: 1, obs[jb]: 1}))
        )
    j3 = obs[rng.integers(len(obs))]
    high = 3 if rng.uniform() < 0.5 else 4
    terms.append((0.15 * scale * rng.uniform(-1.0, 1.0), powers({j3: high})))
    return terms


def _pattern_probabilities(
    graph: PatternGraph, odds: Mapping[Pattern, Polynomial], values: np.ndarray
) -> tuple[dict[Pattern, np.ndarray], np.ndarray]:
    """Per-row conditional pattern probabilities and the complete-case share."""
    log_odds = {r: eval_polynomial(odds[r], values) for r in graph.non_source_nodes}
    q = combine_q(graph, {r: np.exp(v) for r, v in log_odds.items()})
    denom = np.zeros(values.shape[0])
    for arr in q.values():
        denom = denom + arr
    pi = 1.0 / denom
    probs = {r: arr * pi for r, arr in q.items()}
    return probs, pi


def _draw_covariates_outcome(
    rng: np.random.Generator, n: int, theta: Sequence[float]
) -> np.ndarray:
    d = len(theta)
    x = truncated_normal(rng, (n, d - 1))
    eta = theta[0] + x @ np.asarray(theta[1:])
    y = (rng.uniform(size=n) < expit(eta)).astype(float)
    return np.column_stack([y, x])


def calibrate_odds(
    graph: PatternGraph,
    theta: Sequence[float] = DEFAULT_THETA,
    seed: int = DEFAULT_ODDS_SEED,
    target_complete: float = 0.35,
    scale: float = 1.2,
    n_calibration: int = 20000,
    max_rounds: int = 80,
) -> dict[Pattern, Polynomial]:
    """Draw random odds polynomials, then tune constants to hit mass targets.

    The incomplete patterns share the remaining mass equally.  Constants
    are adjusted by damped log-ratio updates against Monte Carlo pattern
    probabilities on a fixed calibration sample.
    """
    rng = np.random.default_rng(seed)
    non_source = graph.processing_order()
    polys = {r: _random_polynomial(r, rng, graph.d, scale) for r in non_source}
    values = _draw_covariates_outcome(rng, n_calibration, theta)
    base = {r: eval_polynomial(tuple(polys[r][1:]), values) for r in non_source}
    const = {r: 0.0 for r in non_source}
    target = {r: (1.0 - target_complete) / len(non_source) for r in non_source}

    for _ in range(max_rounds):
        odds_vals = {r: np.exp(np.clip(const[r] + base[r], -30, 30)) for r in non_source}
        q = combine_q(graph, odds_vals)
        denom = np.zeros(n_calibration)
        for arr in q.values():
            denom = denom + arr
        worst = 0.0
        for r in non_source:
            share = float(np.mean(q[r] / denom))
            ratio = target[r] / max(share, 1e-12)
            const[r] += 0.7 * np.log(ratio)
            worst = max(worst, abs(np.log(ratio)))
        if worst < 0.01:
            break

    out: dict[Pattern, Polynomial] = {}
    for r in non_source:
        terms = [(const[r], (0,) * graph.d)] + [
            (c, p) for c, p in polys[r][1:]
        ]
        out[r] = tuple(terms)
    return out


@lru_cache(maxsize=8)
def _default_odds_cached(seed: int) -> tuple[tuple[Pattern, Polynomial], ...]:
    odds = calibrate_odds(default_study_graph(), seed=seed)
    return tuple(sorted(odds.items(), key=lambda kv: str(kv[0])))


def default_odds(seed: int = DEFAULT_ODDS_SEED) -> dict[Pattern, Polynomial]:
    return dict(_default_odds_cached(seed))


def default_config(**overrides) -> SimConfig:
    """The standard study configuration with the seeded default odds."""
    cfg = SimConfig(odds=default_odds(), **overrides)
    return cfg


@dataclass
class SimData:
    """One generated replicate: the masked dataset plus generation truth."""

    dataset: Dataset
    full_values: np.ndarray  # (n, d) before masking
    pi: np.ndarray  # per-row P(complete | L)
    pattern_draws: list[Pattern]


def column_names(d: int) -> list[str]:
    return ["y"] + [f"x{j}" for j in range(1, d)]


def generate(cfg: SimConfig, rep_index: int = 0) -> SimData:
    """Draw one replicate from counter-based stream (seed, rep_index)."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, rep_index)))
    d = cfg.graph.d
    values = _draw_covariates_outcome(rng, cfg.n, cfg.theta)
    probs, pi = _pattern_probabilities(cfg.graph, cfg.odds, values)
    patterns = sorted(probs, key=str)
    prob_mat = np.column_stack([probs[r] for r in patterns])
    cum = np.cumsum(prob_mat, axis=1)
    cum[:, -1] = 1.0  # guard against rounding in the last bin
    u = rng.uniform(size=cfg.n)
    draw_idx = (u[:, None] > cum).sum(axis=1)
    drawn = [patterns[i] for i in draw_idx]
    mask = np.array([p.bits for p in drawn], dtype=bool)
    ds = from_arrays(
        values=np.where(mask, values, np.nan),
        mask=mask,
        column_names=column_names(d),
        column_kinds=["discrete"] + ["continuous"] * (d - 1),
    )
    return SimData(dataset=ds, full_values=values, pi=pi, pattern_draws=drawn)


def true_weights(cfg: SimConfig, ds: Dataset) -> WeightSet:
    """Inverse of the generating complete-case propensity on complete rows."""
    complete = ds.complete_rows
    if complete.size == 0:
        raise FitError("no complete cases")
    values = ds.values[complete]
    log_odds = {r: eval_polynomial(cfg.odds[r], values) for r in cfg.graph.non_source_nodes}
    q = combine_q(cfg.graph, {r: np.exp(v) for r, v in log_odds.items()})
    return WeightSet(complete_rows=complete, q=q, method="true")


@dataclass
class MethodSummary:
    method: str
    graph_label: str
    n_reps: int
    n_failed: int
    bias: np.ndarray
    mse: np.ndarray

    @property
    def bias_l1(self) -> float:
        return float(np.sum(np.abs(self.bias)))

    @property
    def mse_l2(self) -> float:
        return float(np.sqrt(np.sum(self.mse**2)))


@dataclass
class StudyResult:
    theta_true: np.ndarray
    estimates: dict[tuple[str, str], np.ndarray]  # (method, graph_label) -> (reps, q) with NaN on failure
    summaries: list[MethodSummary]

    def summary(self, method: str, graph_label: str | None = None) -> MethodSummary:
        for s in self.summaries:
            if s.method == method and (graph_label is None or s.graph_label == graph_label):
                return s
        raise KeyError(f"no summary for method {method!r} and graph {graph_label!r}")

    def to_frame(self) -> pd.DataFrame:
        """Long-format table: one row per (method, graph, coefficient) + aggregates."""
        rows = []
        for s in self.summaries:
            for j in range(self.theta_true.size):
                rows.append(
                    {
                        "method": s.method,
                        "graph": s.graph_label,
                        "coef": f"theta_{j + 1}",
                        "bias": s.bias[j],
                        "mse": s.mse[j],
                    }
                )
            rows.append(
                {
                    "method": s.method,
                    "graph": s.graph_label,
                    "coef": "aggregate",
                    "bias": s.bias_l1,
                    "mse": s.mse_l2,
                }
            )
        return pd.DataFrame(rows, columns=["method", "graph", "coef", "bias", "mse"])

    def failures(self) -> dict[tuple[str, str], int]:
        return {(s.method, s.graph_label): s.n_failed for s in self.summaries}


def _fit_one_method(
    cfg: SimConfig, sim: SimData, method: str, graph: PatternGraph, rep_index: int
) -> np.ndarray:
    d = cfg.graph.d
    names = column_names(d)
    ee = EEProblem(outcome=names[0], predictors=tuple(names[1:]))
    ds = sim.dataset
    if method == "full":
        x = np.column_stack([np.ones(cfg.n), sim.full_values[:, 1:]])
        return newton_logistic(x, sim.full_values[:, 0]).theta
    if method == "cc":
        rows = ds.complete_rows
        x, y = ee.design(ds, rows)
        return newton_logistic(x, y).theta
    if method == "true":
        ws = true_weights(cfg, ds)
    else:
        _, ws = fit_weights_for_method(
            method,
            graph,
            ds,
            basis_cfg=cfg.basis_cfg,
            lambda_policy=cfg.lambda_policy,
            opts=cfg.solver_opts,
            seed=int(np.random.SeedSequence((cfg.seed, rep_index, 1)).generate_state(1)[0]),
            k_folds=cfg.k_folds,
        )
    w = ws.w
    if float(w.max()) > cfg.weight_cap:
        raise FitError(f"weights blew up: max {w.max():.3g} exceeds {cfg.weight_cap:.3g}")
    return solve_weighted_ee(ds, ws, ee).theta


def _replicate_worker(args: tuple) -> tuple[int, dict[tuple[str, str], np.ndarray | None]]:
    cfg, labeled_graphs, methods_by_label, rep = args
    sim = generate(cfg, rep)
    out: dict[tuple[str, str], np.ndarray | None] = {}
    for label, graph in labeled_graphs:
        for method in methods_by_label[label]:
            try:
                out[(method, label)] = _fit_one_method(cfg, sim, method, graph, rep)
            except (FitError, np.linalg.LinAlgError):
                out[(method, label)] = None
    return rep, out


def _run_engine(
    cfg: SimConfig,
    labeled_graphs: list[tuple[str, PatternGraph]],
    methods_by_label: dict[str, tuple[str, ...]],
    threads: int = 1,
) -> StudyResult:
    jobs = [(cfg, labeled_graphs, methods_by_label, rep) for rep in range(cfg.reps)]
    results: dict[int, dict] = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for rep, out in pool.map(_replicate_worker, jobs, chunksize=1):
                results[rep] = out
    else:
        for job in jobs:
            rep, out = _replicate_worker(job)
            results[rep] = out

    theta_true = np.asarray(cfg.theta, dtype=float)
    q = theta_true.size
    estimates: dict[tuple[str, str], np.ndarray] = {}
    summaries: list[MethodSummary] = []
    for label, _ in labeled_graphs:
        for method in methods_by_label[label]:
            stack = np.full((cfg.reps, q), np.nan)
            for rep in range(cfg.reps):
                theta = results[rep][(method, label)]
                if theta is not None:
                    stack[rep] = theta
            estimates[(method, label)] = stack
            ok = ~np.isnan(stack[:, 0])
            n_ok = int(ok.sum())
            if n_ok == 0:
                raise FitError(f"method {method!r} failed in every replicate")
            err = stack[ok] - theta_true
            summaries.append(
                MethodSummary(
                    method=method,
                    graph_label=label,
                    n_reps=cfg.reps,
                    n_failed=cfg.reps - n_ok,
                    bias=err.mean(axis=0),
                    mse=(err**2).mean(axis=0),
                )
            )
    return StudyResult(theta_true=theta_true, estimates=estimates, summaries=summaries)


def run_study(cfg: SimConfig, threads: int = 1, graph_label: str = "study") -> StudyResult:
    """Replicate the full generate-fit cycle for every configured method."""
    return _run_engine(
        cfg,
        [(graph_label, cfg.graph)],
        {graph_label: cfg.methods},
        threads=threads,
    )


def sensitivity_study(
    cfg: SimConfig,
    graphs: Mapping[str, PatternGraph] | None = None,
    threads: int = 1,
) -> StudyResult:
    """Refit the graph-based methods under alternative analysis graphs.

    Data are always generated from ``cfg.graph``; each labeled graph is
    used only on the estimation side.  Methods that do not depend on the
    graph (full, cc, true) are skipped here.
    """
    if graphs is None:
        graphs = sensitivity_graphs()
    graph_methods = tuple(m for m in cfg.methods if m in GRAPH_METHODS)
    if not graph_methods:
        raise ConfigError("sensitivity study needs at least one graph-based method")
    labeled = list(graphs.items())
    for label, g in labeled:
        rep = g.validate()
        if not rep.is_regular:
            raise ConfigError(f"analysis graph {label!r} is not regular: {rep}")
    return _run_engine(
        cfg,
        labeled,
        {label: graph_methods for label, _ in labeled},
        threads=threads,
    )
