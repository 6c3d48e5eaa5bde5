"""End-to-end fit orchestration shared by the CLI and library callers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .basis import BasisConfig
from .data import Dataset
from .errors import FitError
from .estimator import (
    EEProblem,
    FitResult,
    bootstrap_covariance,
    compute_influence,
    sandwich_covariance,
    solve_weighted_ee,
    wald_table,
)
from .optim import SolverOptions
from .patterns import PatternGraph
from .weights import OddsModels, WeightSet, balance_report, fit_weights_for_method

logger = logging.getLogger(__name__)

VARIANCE_METHODS = ("sandwich", "bootstrap")


@dataclass
class FitSettings:
    """Everything needed to run one estimation end to end."""

    outcome: str
    predictors: tuple[str, ...]
    method: str = "seq"
    lambda_policy: object = "cv"
    basis_cfg: BasisConfig = field(default_factory=BasisConfig)
    solver_opts: SolverOptions = field(default_factory=SolverOptions)
    k_folds: int = 5
    variance: str = "sandwich"
    bootstrap_reps: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variance not in VARIANCE_METHODS:
            raise FitError(f"variance must be one of {VARIANCE_METHODS}")


@dataclass
class FitArtifacts:
    fit: FitResult
    weight_set: WeightSet
    models: OddsModels | None
    balance: pd.DataFrame


def run_fit(ds: Dataset, g: PatternGraph, settings: FitSettings) -> FitArtifacts:
    """Weights, point estimate, variance and balance diagnostics in one pass."""
    ee = EEProblem(outcome=settings.outcome, predictors=tuple(settings.predictors))
    models, ws = fit_weights_for_method(
        settings.method,
        g,
        ds,
        basis_cfg=settings.basis_cfg,
        lambda_policy=settings.lambda_policy,
        opts=settings.solver_opts,
        seed=settings.seed,
        k_folds=settings.k_folds,
    )
    newton = solve_weighted_ee(ds, ws, ee)

    all_type1 = all(g.coeff_type_of(r) == "type1" for r in g.non_source_nodes)
    variance = settings.variance
    if variance == "sandwich" and not all_type1:
        logger.warning(
            "sandwich variance covers type1 mixture coefficients only; "
            "falling back to the bootstrap"
        )
        variance = "bootstrap"

    if variance == "sandwich":
        influence = compute_influence(ds, ws, newton.theta, ee, settings.basis_cfg)
        cov = sandwich_covariance(ds, ws, newton.theta, ee, influence)
    else:
        lam_map = models.lambda_map() if models is not None else {}
        cov, _ = bootstrap_covariance(
            ds,
            g,
            settings.method,
            ee,
            basis_cfg=settings.basis_cfg,
            lambda_map=lam_map if lam_map else None,
            B=settings.bootstrap_reps,
            seed=settings.seed,
            opts=settings.solver_opts,
        )
    se, z, p = wald_table(newton.theta, cov)

    lambda_by_pattern = {}
    if models is not None:
        lambda_by_pattern = {str(r): lam for r, lam in models.lambda_by_node().items()}
    fit = FitResult(
        method=settings.method,
        parameter_names=ee.parameter_names,
        theta=newton.theta,
        cov=cov,
        se=se,
        z=z,
        p_values=p,
        n=ds.n,
        n_complete=int(ds.complete_rows.size),
        variance_method=variance,
        lambda_by_pattern=lambda_by_pattern,
        newton_iterations=newton.iterations,
        converged=newton.converged,
    )
    if models is not None:
        balance = balance_report(ws, models, g, ds)
    else:
        balance = pd.DataFrame(
            columns=["pattern", "term", "target_mean", "source_mean", "gap", "slack"]
        )
    return FitArtifacts(fit=fit, weight_set=ws, models=models, balance=balance)
