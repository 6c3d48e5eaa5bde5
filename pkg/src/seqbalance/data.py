"""Tabular data with explicit missingness masks.

Missing cells are represented by a boolean mask (True = observed); the
value array holds NaN in masked slots purely as a tripwire, never as the
missingness flag itself.  All downstream access to partially observed
rows goes through :func:`Dataset.observed_view`, which refuses to expose
cells the requested pattern does not cover.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .patterns import Pattern, PatternGraph

KINDS = ("continuous", "discrete")

# a column is inferred discrete when every observed value is integral and
# the number of distinct observed values is at most this many
MAX_DISCRETE_LEVELS = 10


@dataclass(frozen=True)
class ObservedView:
    """A rectangular, fully observed slice of a dataset."""

    rows: np.ndarray
    columns: tuple[int, ...]
    column_names: tuple[str, ...]
    matrix: np.ndarray  # (len(rows), len(columns)), no NaN

    def __post_init__(self) -> None:
        if self.matrix.shape != (len(self.rows), len(self.columns)):
            raise DataError("observed view shape mismatch")


@dataclass
class CompatReport:
    """Result of checking a dataset against a pattern graph."""

    fatal: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    complete_fraction: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.fatal


@dataclass
class Dataset:
    values: np.ndarray  # (n, d) float64, NaN where masked
    mask: np.ndarray  # (n, d) bool, True = observed
    column_names: list[str]
    column_kinds: list[str]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise DataError("values and mask must have identical shapes")
        if self.values.ndim != 2:
            raise DataError("values must be a 2-d array")
        n, d = self.values.shape
        if len(self.column_names) != d or len(self.column_kinds) != d:
            raise DataError("column metadata length must match the number of columns")
        for kind in self.column_kinds:
            if kind not in KINDS:
                raise DataError(f"unknown column kind {kind!r}")
        if np.isnan(self.values[self.mask]).any():
            raise DataError("observed cells must not be NaN")
        # keep the tripwire honest: masked slots are always NaN
        self.values = self.values.copy()
        self.values[~self.mask] = np.nan
        self._row_patterns: list[Pattern] = [
            Pattern(tuple(int(b) for b in row)) for row in self.mask
        ]
        index: dict[Pattern, list[int]] = {}
        for i, p in enumerate(self._row_patterns):
            index.setdefault(p, []).append(i)
        self._pattern_index: dict[Pattern, np.ndarray] = {
            p: np.asarray(rows, dtype=np.intp) for p, rows in index.items()
        }

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def complete_pattern(self) -> Pattern:
        return Pattern.complete(self.d)

    @property
    def row_patterns(self) -> list[Pattern]:
        return list(self._row_patterns)

    @property
    def pattern_index(self) -> dict[Pattern, np.ndarray]:
        return {p: rows.copy() for p, rows in self._pattern_index.items()}

    def rows_for(self, r: Pattern) -> np.ndarray:
        return self._pattern_index.get(r, np.empty(0, dtype=np.intp)).copy()

    @property
    def complete_rows(self) -> np.ndarray:
        return self.rows_for(self.complete_pattern)

    def pattern_counts(self) -> dict[Pattern, int]:
        return {p: len(rows) for p, rows in self._pattern_index.items()}

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}") from None

    def observed_view(self, r: Pattern, rows: Sequence[int] | np.ndarray | None = None) -> ObservedView:
        """Columns observed under ``r`` for rows that actually observe them.

        Raises if any requested row leaves one of those columns missing;
        silent NaN propagation is never allowed.
        """
        if len(r) != self.d:
            raise DataError(f"pattern {r} has length {len(r)}, dataset has {self.d} columns")
        if rows is None:
            row_idx = np.arange(self.n, dtype=np.intp)
        else:
            row_idx = np.asarray(rows, dtype=np.intp)
        cols = r.observed_indices
        if row_idx.size:
            sub = self.mask[np.ix_(row_idx, cols)]
            if not sub.all():
                bad_r, bad_c = np.nonzero(~sub)
                i, j = int(row_idx[bad_r[0]]), cols[bad_c[0]]
                raise DataError(
                    f"row {i} does not observe column {self.column_names[j]!r} "
                    f"required by pattern {r}"
                )
        return ObservedView(
            rows=row_idx,
            columns=cols,
            column_names=tuple(self.column_names[j] for j in cols),
            matrix=self.values[np.ix_(row_idx, cols)].copy(),
        )

    def take(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        """Row subset (with repetition allowed), e.g. for bootstrap resamples."""
        idx = np.asarray(rows, dtype=np.intp)
        return Dataset(
            values=self.values[idx],
            mask=self.mask[idx],
            column_names=list(self.column_names),
            column_kinds=list(self.column_kinds),
        )

    def check_against_graph(self, g: PatternGraph, overlap_floor: float = 0.05) -> CompatReport:
        report = CompatReport()
        if self.d != g.d:
            report.fatal.append(
                f"dataset has {self.d} columns but the graph is over {g.d} coordinates"
            )
            return report
        counts = self.pattern_counts()
        for p in sorted(counts, key=str):
            if p not in g.nodes:
                report.fatal.append(
                    f"{counts[p]} rows have pattern {p} which is not a graph node"
                )
        n_complete = counts.get(self.complete_pattern, 0)
        if n_complete == 0:
            report.fatal.append("no complete cases in the dataset")
        report.complete_fraction = n_complete / self.n if self.n else 0.0
        if n_complete and report.complete_fraction < overlap_floor:
            report.warnings.append(
                f"complete-case fraction {report.complete_fraction:.4f} is below "
                f"the floor {overlap_floor}"
            )
        for r in sorted(g.nodes, key=str):
            if counts.get(r, 0) == 0:
                report.warnings.append(f"graph node {r} has no rows in the dataset")
        return report

    def to_csv(self, path, na_token: str = "NA") -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.column_names)
            for i in range(self.n):
                row = []
                for j in range(self.d):
                    if self.mask[i, j]:
                        row.append(_format_value(self.values[i, j]))
                    else:
                        row.append(na_token)
                writer.writerow(row)


def _format_value(x: float) -> str:
    # repr of a float round-trips exactly; integral values print without '.0'
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def load_csv(
    path,
    na_token: str = "NA",
    column_kinds: Mapping[str, str] | None = None,
) -> Dataset:
    """Read a headed, RFC-4180 CSV into a masked dataset.

    Cells equal to ``na_token`` become masked.  Column kinds are inferred
    (integral with few distinct values -> discrete) unless overridden.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError(f"{path} has duplicate column names")
        d = len(header)
        values_rows: list[list[float]] = []
        mask_rows: list[list[bool]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d:
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {d}"
                )
            vals, obs = [], []
            for j, cell in enumerate(row):
                cell = cell.strip()
                if cell == na_token:
                    vals.append(np.nan)
                    obs.append(False)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {header[j]!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
                obs.append(True)
            values_rows.append(vals)
            mask_rows.append(obs)
    if not values_rows:
        raise DataError(f"{path} has a header but no data rows")

    values = np.asarray(values_rows, dtype=float)
    mask = np.asarray(mask_rows, dtype=bool)
    kinds = _infer_kinds(values, mask, header, column_kinds)
    return Dataset(values=values, mask=mask, column_names=header, column_kinds=kinds)


def _infer_kinds(
    values: np.ndarray,
    mask: np.ndarray,
    names: list[str],
    overrides: Mapping[str, str] | None,
) -> list[str]:
    overrides = dict(overrides or {})
    for name, kind in overrides.items():
        if name not in names:
            raise DataError(f"column kind override names unknown column {name!r}")
        if kind not in KINDS:
            raise DataError(f"column kind for {name!r} must be one of {KINDS}")
    kinds = []
    for j, name in enumerate(names):
        if name in overrides:
            kinds.append(overrides[name])
            continue
        obs = values[mask[:, j], j]
        if obs.size and np.all(obs == np.round(obs)) and np.unique(obs).size <= MAX_DISCRETE_LEVELS:
            kinds.append("discrete")
        else:
            kinds.append("continuous")
    return kinds


def from_arrays(
    values: np.ndarray,
    mask: np.ndarray,
    column_names: Sequence[str],
    column_kinds: Sequence[str] | None = None,
) -> Dataset:
    """Build a dataset directly from arrays, inferring kinds when omitted."""
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if values.shape != mask.shape:
        raise DataError("values and mask must have identical shapes")
    names = list(column_names)
    if column_kinds is None:
        kinds = _infer_kinds(values, mask, names, None)
    else:
        kinds = list(column_kinds)
    return Dataset(values=values, mask=mask, column_names=names, column_kinds=kinds)
