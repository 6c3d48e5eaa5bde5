"""Weighted logistic estimating equations with a pattern-aware sandwich.

The target parameter solves the complete-case weighted moment condition
(1/N) sum_i 1{complete} w_i psi_theta(L_i) = 0 with the logistic score
psi_theta(L) = (y - expit(x~' theta)) x~.  Standard errors come from a
sandwich whose meat stacks, per row, the row's own projection term and
(on complete cases) the weighted residual terms of every pattern the row
donates to; a nonparametric bootstrap is available as an alternative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit, ndtr

from .basis import BasisConfig, build_basis, design_matrix
from .data import Dataset
from .errors import ConvergenceError, FitError
from .patterns import Pattern, PatternGraph
from .weights import SolverOptions, WeightSet, fit_weights_for_method

logger = logging.getLogger(__name__)

U_RIDGE = 1e-8
MIN_BOOTSTRAP = 2
LOW_PRECISION_BOOTSTRAP = 50


@dataclass(frozen=True)
class EEProblem:
    """Logistic estimating equation: outcome regressed on 1 + predictors."""

    outcome: str
    predictors: tuple[str, ...]

    @property
    def n_coef(self) -> int:
        return len(self.predictors) + 1

    @property
    def parameter_names(self) -> tuple[str, ...]:
        return ("intercept",) + self.predictors

    def design(self, ds: Dataset, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cols = [ds.column_index(self.outcome)] + [ds.column_index(p) for p in self.predictors]
        sub = ds.values[np.ix_(rows, cols)]
        if np.isnan(sub).any():
            raise FitError("estimating equation touched a masked cell")
        y = sub[:, 0]
        x = np.column_stack([np.ones(rows.size), sub[:, 1:]])
        return x, y


def design_from_matrix(values: np.ndarray, outcome_col: int, predictor_cols: list[int]) -> tuple[np.ndarray, np.ndarray]:
    """Design straight from a dense value matrix (e.g. pre-masking data)."""
    y = values[:, outcome_col]
    x = np.column_stack([np.ones(values.shape[0]), values[:, predictor_cols]])
    return x, y


def psi(theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Estimating-function rows: (y - expit(x theta)) * x, shape (n, q)."""
    resid = y - expit(x @ theta)
    return resid[:, None] * x


def psi_dot(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sum of per-row Jacobians of psi: -X' diag(p(1-p)) X, shape (q, q)."""
    p = expit(x @ theta)
    return -(x * (p * (1.0 - p))[:, None]).T @ x


@dataclass
class NewtonResult:
    theta: np.ndarray
    iterations: int
    converged: bool
    score_inf: float


def newton_logistic(
    x: np.ndarray,
    y: np.ndarray,
    w: np.ndarray | None = None,
    n_total: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> NewtonResult:
    """Damped Newton root of the (weighted) logistic score.

    The score is normalized by ``n_total`` (defaults to the row count);
    steps are halved until the max score component decreases.
    """
    n, q = x.shape
    if w is None:
        w = np.ones(n)
    norm = float(n_total) if n_total is not None else float(n)
    theta = np.zeros(q)

    def score(th: np.ndarray) -> np.ndarray:
        return x.T @ (w * (y - expit(x @ th))) / norm

    s = score(theta)
    for it in range(max_iter):
        s_inf = float(np.max(np.abs(s)))
        if s_inf <= tol:
            return NewtonResult(theta=theta, iterations=it, converged=True, score_inf=s_inf)
        p = expit(x @ theta)
        wc = w * p * (1.0 - p)
        info = (x * wc[:, None]).T @ x / norm
        try:
            delta = np.linalg.solve(info, s)
        except np.linalg.LinAlgError:
            raise FitError(
                "singular weighted information matrix in the Newton step; "
                "predictors may be collinear"
            ) from None
        step = 1.0
        for _ in range(30):
            cand = theta + step * delta
            s_cand = score(cand)
            if float(np.max(np.abs(s_cand))) < s_inf:
                theta, s = cand, s_cand
                break
            step *= 0.5
        else:
            raise ConvergenceError(
                f"Newton step failed to reduce the score (|score| = {s_inf:.2e})"
            )
    s_inf = float(np.max(np.abs(s)))
    if s_inf <= tol:
        return NewtonResult(theta=theta, iterations=max_iter, converged=True, score_inf=s_inf)
    raise ConvergenceError(
        f"estimating equation not solved after {max_iter} iterations "
        f"(|score| = {s_inf:.2e})"
    )


def solve_weighted_ee(
    ds: Dataset,
    ws: WeightSet,
    ee: EEProblem,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> NewtonResult:
    """Solve the weighted complete-case estimating equation."""
    rows = ws.complete_rows
    if rows.size == 0:
        raise FitError("no complete cases to solve the estimating equation on")
    x, y = ee.design(ds, rows)
    return newton_logistic(x, y, w=ws.w, n_total=ds.n, tol=tol, max_iter=max_iter)


def estimate_u(
    ds: Dataset,
    ws: WeightSet,
    theta: np.ndarray,
    r: Pattern,
    ee: EEProblem,
    basis_cfg: BasisConfig = BasisConfig(),
) -> np.ndarray:
    """Projection coefficients of psi onto pattern r's basis, shape (K_r, q).

    Weighted least squares over complete cases with the pattern's weight
    component as weights and a small ridge for conditioning.
    """
    complete = ds.complete_rows
    if r not in ws.q:
        raise FitError(f"weight set has no component for pattern {r}")
    spec = build_basis(ds, r, basis_cfg)
    phi = design_matrix(spec, ds, complete)
    x, y = ee.design(ds, complete)
    psim = psi(theta, x, y)
    wq = ws.q[r]
    a = phi.T @ (wq[:, None] * phi) + U_RIDGE * np.eye(phi.shape[1])
    b = phi.T @ (wq[:, None] * psim)
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        raise FitError(
            f"projection basis for pattern {r} is rank deficient even with ridge"
        ) from None


@dataclass
class InfluencePieces:
    """Fitted projection coefficients and assembled, centered influence rows."""

    u_coef: dict[Pattern, np.ndarray] = field(default_factory=dict)
    F: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))


def compute_influence(
    ds: Dataset,
    ws: WeightSet,
    theta: np.ndarray,
    ee: EEProblem,
    basis_cfg: BasisConfig = BasisConfig(),
) -> InfluencePieces:
    """Per-row influence contributions for the sandwich variance.

    Complete rows receive psi plus, for every other pattern they donate
    to, the weighted residual of psi against that pattern's projection.
    A row with an incomplete pattern receives its own pattern's projected
    value; patterns outside the weight set contribute nothing (this makes
    the complete-case method a special case).  Rows are mean-centered.
    """
    source = ds.complete_pattern
    complete = ds.complete_rows
    x_c, y_c = ee.design(ds, complete)
    psi_c = psi(theta, x_c, y_c)
    q_dim = ee.n_coef
    pieces = InfluencePieces()
    f = np.zeros((ds.n, q_dim))
    f_complete = psi_c.copy()
    for r in sorted(ws.q, key=str):
        if r == source:
            continue
        coef = estimate_u(ds, ws, theta, r, ee, basis_cfg)
        pieces.u_coef[r] = coef
        spec = build_basis(ds, r, basis_cfg)
        u_on_complete = design_matrix(spec, ds, complete) @ coef
        f_complete += ws.q[r][:, None] * (psi_c - u_on_complete)
        own_rows = ds.rows_for(r)
        if own_rows.size:
            f[own_rows] = design_matrix(spec, ds, own_rows) @ coef
    f[complete] = f_complete
    f -= f.mean(axis=0)
    pieces.F = f
    return pieces


def sandwich_covariance(
    ds: Dataset,
    ws: WeightSet,
    theta: np.ndarray,
    ee: EEProblem,
    influence: InfluencePieces,
) -> np.ndarray:
    """Covariance of theta-hat: D^-1 V D^-T / N with V from influence rows."""
    complete = ws.complete_rows
    x_c, _ = ee.design(ds, complete)
    p = expit(x_c @ theta)
    wpq = ws.w * p * (1.0 - p)
    d_mat = -(x_c * wpq[:, None]).T @ x_c / ds.n
    v_mat = influence.F.T @ influence.F / ds.n
    try:
        dinv_v = np.linalg.solve(d_mat, v_mat)
        cov = np.linalg.solve(d_mat, dinv_v.T).T / ds.n
    except np.linalg.LinAlgError:
        raise FitError("bread matrix of the sandwich is singular") from None
    return 0.5 * (cov + cov.T)


def wald_table(theta: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Standard errors, z statistics and two-sided normal p-values."""
    var = np.diag(cov).copy()
    if (var < -1e-10).any():
        raise FitError("sandwich covariance has a negative variance entry")
    se = np.sqrt(np.maximum(var, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, theta / se, np.inf * np.sign(theta))
    pvals = 2.0 * ndtr(-np.abs(z))
    return se, z, pvals


@dataclass
class FitResult:
    """One estimation run: parameters, uncertainty and fit metadata."""

    method: str
    parameter_names: tuple[str, ...]
    theta: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_values: np.ndarray
    n: int
    n_complete: int
    variance_method: str
    lambda_by_pattern: dict[str, float] = field(default_factory=dict)
    newton_iterations: int = 0
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "parameters": list(self.parameter_names),
            "theta": [float(v) for v in self.theta],
            "se": [float(v) for v in self.se],
            "z": [float(v) for v in self.z],
            "p_values": [float(v) for v in self.p_values],
            "covariance": [[float(v) for v in row] for row in self.cov],
            "n": int(self.n),
            "n_complete": int(self.n_complete),
            "variance_method": self.variance_method,
            "lambda_by_pattern": {k: float(v) for k, v in sorted(self.lambda_by_pattern.items())},
            "newton_iterations": int(self.newton_iterations),
            "converged": bool(self.converged),
        }


def bootstrap_covariance(
    ds: Dataset,
    g: PatternGraph,
    method: str,
    ee: EEProblem,
    basis_cfg: BasisConfig = BasisConfig(),
    lambda_map: Mapping | None = None,
    B: int = 200,
    seed: int = 0,
    opts: SolverOptions = SolverOptions(),
    max_failure_fraction: float = 0.2,
) -> tuple[np.ndarray, int]:
    """Nonparametric bootstrap of the full weight-and-solve pipeline.

    Each replicate resamples rows with replacement, refits weights with
    the penalty levels held fixed at ``lambda_map`` (from the original
    fit), and re-solves the estimating equation.  Failed replicates are
    skipped; more than ``max_failure_fraction`` failures is an error.
    Returns the covariance across replicates and the failure count.
    """
    if B < MIN_BOOTSTRAP:
        raise FitError(f"bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {B}")
    if B < LOW_PRECISION_BOOTSTRAP:
        logger.warning(
            "bootstrap with B=%d replicates is low precision; use %d or more",
            B,
            LOW_PRECISION_BOOTSTRAP,
        )
    policy: object = lambda_map if lambda_map is not None else "cv"
    thetas = []
    failures = 0
    for b in range(B):
        rng = np.random.default_rng(np.random.SeedSequence((seed, b)))
        idx = rng.integers(0, ds.n, size=ds.n)
        sub = ds.take(idx)
        try:
            _, ws = fit_weights_for_method(
                method, g, sub, basis_cfg=basis_cfg, lambda_policy=policy, opts=opts, seed=seed
            )
            res = solve_weighted_ee(sub, ws, ee)
            thetas.append(res.theta)
        except (FitError, np.linalg.LinAlgError):
            failures += 1
    if failures > max_failure_fraction * B:
        raise FitError(
            f"bootstrap failed in {failures} of {B} replicates "
            f"(more than {max_failure_fraction:.0%})"
        )
    stack = np.asarray(thetas)
    cov = np.cov(stack, rowvar=False, ddof=1)
    return np.atleast_2d(cov), failures
