"""Per-pattern regression bases: intercept, B-spline families, indicators.

Each pattern gets its own basis over the columns it observes: a leading
intercept, a clamped B-spline family per continuous column, and a single
indicator of the non-reference level per binary discrete column.  Knots
are placed from complete-case rows only, so the same column yields the
same spline family in every pattern's basis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.interpolate import BSpline

from .data import Dataset
from .errors import FitError
from .patterns import Pattern

KNOT_RULES = ("quantile", "uniform")
PENALTY_RULES = ("sd", "ones")
MAX_DEGREE = 4
PENALTY_FLOOR = 1e-8


@dataclass(frozen=True)
class BasisConfig:
    n_splines: int = 6
    degree: int = 3
    knot_rule: str = "quantile"
    penalty_rule: str = "sd"

    def __post_init__(self) -> None:
        if not 1 <= self.degree <= MAX_DEGREE:
            raise FitError(f"spline degree must be in 1..{MAX_DEGREE}, got {self.degree}")
        if self.n_splines < self.degree + 1:
            raise FitError(
                f"n_splines must be at least degree+1={self.degree + 1}, got {self.n_splines}"
            )
        if self.knot_rule not in KNOT_RULES:
            raise FitError(f"knot_rule must be one of {KNOT_RULES}")
        if self.penalty_rule not in PENALTY_RULES:
            raise FitError(f"penalty_rule must be one of {PENALTY_RULES}")


@dataclass(frozen=True)
class InterceptGroup:
    n_funcs: int = 1

    def names(self) -> list[str]:
        return ["intercept"]


@dataclass(frozen=True)
class SplineGroup:
    column: int
    column_name: str
    knots: tuple[float, ...]  # full clamped knot vector
    degree: int

    @property
    def n_funcs(self) -> int:
        return len(self.knots) - self.degree - 1

    def names(self) -> list[str]:
        return [f"{self.column_name}_bs{i + 1}" for i in range(self.n_funcs)]


@dataclass(frozen=True)
class IndicatorGroup:
    column: int
    column_name: str
    level: float
    n_funcs: int = 1

    def names(self) -> list[str]:
        return [f"{self.column_name}_eq_{self.level:g}"]


Group = InterceptGroup | SplineGroup | IndicatorGroup


@dataclass(frozen=True)
class BasisSpec:
    pattern: Pattern
    groups: tuple[Group, ...]
    term_names: tuple[str, ...]
    t: np.ndarray | None = None  # per-term penalty weights, intercept 0

    @property
    def n_terms(self) -> int:
        return len(self.term_names)


def _spline_knots(x: np.ndarray, cfg: BasisConfig, column_name: str) -> tuple[float, ...]:
    lo, hi = float(np.min(x)), float(np.max(x))
    if lo == hi:
        raise FitError(
            f"column {column_name!r} is constant among complete cases; "
            "declare it discrete or drop it"
        )
    n_interior = cfg.n_splines - cfg.degree - 1
    if cfg.knot_rule == "quantile":
        qs = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
        interior = np.quantile(x, qs) if n_interior else np.empty(0)
    else:
        interior = lo + (hi - lo) * np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    full = np.concatenate(
        [np.full(cfg.degree + 1, lo), np.asarray(interior, dtype=float), np.full(cfg.degree + 1, hi)]
    )
    return tuple(float(v) for v in full)


def build_basis(ds: Dataset, r: Pattern, cfg: BasisConfig = BasisConfig()) -> BasisSpec:
    """Basis over the columns observed under ``r``, knots from complete cases."""
    complete = ds.complete_rows
    if complete.size == 0:
        raise FitError("cannot build a basis: the dataset has no complete cases")
    groups: list[Group] = [InterceptGroup()]
    for j in r.observed_indices:
        col_complete = ds.values[complete, j]
        name = ds.column_names[j]
        if ds.column_kinds[j] == "continuous":
            groups.append(
                SplineGroup(
                    column=j,
                    column_name=name,
                    knots=_spline_knots(col_complete, cfg, name),
                    degree=cfg.degree,
                )
            )
        else:
            levels = np.unique(col_complete)
            if levels.size < 2:
                raise FitError(
                    f"discrete column {name!r} has a single level among complete cases"
                )
            if levels.size > 2:
                raise FitError(
                    f"discrete column {name!r} has {levels.size} levels; "
                    "only binary discrete columns are supported"
                )
            groups.append(
                IndicatorGroup(column=j, column_name=name, level=float(levels[-1]))
            )
    names = tuple(n for g in groups for n in g.names())
    spec = BasisSpec(pattern=r, groups=tuple(groups), term_names=names)
    return replace(spec, t=penalty_weights(spec, ds, cfg.penalty_rule))


def _eval_groups(spec: BasisSpec, full_rows: np.ndarray) -> np.ndarray:
    """Evaluate all terms on a (n, d) matrix whose referenced columns are valid."""
    n = full_rows.shape[0]
    out = np.empty((n, spec.n_terms))
    k = 0
    for g in spec.groups:
        if isinstance(g, InterceptGroup):
            out[:, k] = 1.0
            k += 1
        elif isinstance(g, SplineGroup):
            t = np.asarray(g.knots)
            x = np.clip(full_rows[:, g.column], t[0], t[-1])
            block = BSpline.design_matrix(x, t, g.degree).toarray()
            out[:, k : k + g.n_funcs] = block
            k += g.n_funcs
        else:
            out[:, k] = (full_rows[:, g.column] == g.level).astype(float)
            k += 1
    return out


def design_matrix(spec: BasisSpec, ds: Dataset, rows: Sequence[int] | np.ndarray) -> np.ndarray:
    """Basis values for the given rows; raises if any referenced cell is masked."""
    view = ds.observed_view(spec.pattern, rows)
    full = np.full((len(view.rows), ds.d), np.nan)
    full[:, list(view.columns)] = view.matrix
    return _eval_groups(spec, full)


def evaluate(spec: BasisSpec, row_values: np.ndarray) -> np.ndarray:
    """Basis vector for one full-width row; referenced cells must be non-NaN."""
    row = np.asarray(row_values, dtype=float)
    for g in spec.groups:
        col = getattr(g, "column", None)
        if col is not None and np.isnan(row[col]):
            raise FitError(
                f"basis for pattern {spec.pattern} references column {col} "
                "which is missing in this row"
            )
    return _eval_groups(spec, row[np.newaxis, :])[0]


def penalty_weights(spec: BasisSpec, ds: Dataset, rule: str = "sd") -> np.ndarray:
    """Per-term penalty scales: 0 for the intercept, SD-scaled or flat otherwise."""
    if rule not in PENALTY_RULES:
        raise FitError(f"penalty rule must be one of {PENALTY_RULES}")
    t = np.ones(spec.n_terms)
    t[0] = 0.0
    if rule == "sd":
        complete = ds.complete_rows
        if complete.size == 0:
            raise FitError("cannot scale penalties: the dataset has no complete cases")
        phi = design_matrix(spec, ds, complete)
        sd = phi.std(axis=0)
        t[1:] = np.maximum(sd[1:], PENALTY_FLOOR)
    return t
