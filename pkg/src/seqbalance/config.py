"""Loading run and study configurations from TOML or JSON files."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .basis import BasisConfig
from .errors import ConfigError, FitError
from .optim import SolverOptions
from .patterns import Pattern, PatternGraph, load_graph
from .pipeline import FitSettings
from .simulate import (
    DEFAULT_ODDS_SEED,
    DEFAULT_STUDY_BASIS,
    DEFAULT_STUDY_LAMBDA,
    DEFAULT_THETA,
    ALL_METHODS,
    SimConfig,
    calibrate_odds,
    ccmv_study_graph,
    default_odds,
    default_study_graph,
    pruned_study_graph,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUILTIN_GRAPHS = {
    "study": default_study_graph,
    "study-pruned": pruned_study_graph,
    "ccmv": ccmv_study_graph,
}


def _load_document(path: Path) -> dict:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            return tomllib.loads(raw.decode("utf-8"))
        if suffix == ".json":
            return json.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config {path} failed to parse: {exc}") from exc
    raise ConfigError(f"config {path} must be a .toml or .json file")


def _take(doc: dict, allowed: set[str], context: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")


def _basis_config(doc: dict) -> BasisConfig:
    _take(doc, {"n_splines", "degree", "knot_rule", "penalty_rule"}, "basis")
    try:
        return BasisConfig(**doc)
    except FitError as exc:
        raise ConfigError(str(exc)) from exc


def _solver_options(doc: dict) -> SolverOptions:
    _take(doc, {"tol", "max_iter", "kkt_tol"}, "solver")
    return SolverOptions(**doc)


def _lambda_policy(doc: object) -> float | str:
    if doc is None:
        return "cv"
    if isinstance(doc, str):
        if doc != "cv":
            raise ConfigError(f"lambda policy string must be 'cv', got {doc!r}")
        return "cv"
    if isinstance(doc, (int, float)):
        if doc < 0:
            raise ConfigError("a fixed lambda must be nonnegative")
        return float(doc)
    if isinstance(doc, dict):
        _take(doc, {"policy", "value"}, "lambda")
        policy = doc.get("policy", "cv")
        if policy == "cv":
            return "cv"
        if policy == "fixed":
            if "value" not in doc:
                raise ConfigError("lambda policy 'fixed' needs a 'value'")
            return _lambda_policy(doc["value"])
        raise ConfigError(f"lambda policy must be 'cv' or 'fixed', got {policy!r}")
    raise ConfigError(f"cannot interpret lambda policy {doc!r}")


@dataclass
class RunConfig:
    """A fit run: file inputs plus estimation settings."""

    graph_path: str
    data_path: str
    settings: FitSettings
    na_token: str = "NA"
    column_kinds: dict[str, str] = field(default_factory=dict)
    overlap_floor: float = 0.05
    out_dir: str | None = None
    seed: int | None = None


def load_run_config(path) -> RunConfig:
    path = Path(path)
    doc = _load_document(path)
    allowed = {
        "graph", "data", "na_token", "outcome", "predictors", "method", "lambda",
        "basis", "solver", "k_folds", "variance", "bootstrap_reps", "seed",
        "out_dir", "column_kinds", "overlap_floor",
    }
    _take(doc, allowed, "run config")
    for key in ("graph", "data", "outcome", "predictors"):
        if key not in doc:
            raise ConfigError(f"run config is missing required key {key!r}")
    predictors = doc["predictors"]
    if not isinstance(predictors, list) or not all(isinstance(p, str) for p in predictors):
        raise ConfigError("'predictors' must be a list of column names")
    variance = doc.get("variance", "sandwich")
    try:
        settings = FitSettings(
            outcome=str(doc["outcome"]),
            predictors=tuple(predictors),
            method=str(doc.get("method", "seq")),
            lambda_policy=_lambda_policy(doc.get("lambda")),
            basis_cfg=_basis_config(dict(doc.get("basis", {}))),
            solver_opts=_solver_options(dict(doc.get("solver", {}))),
            k_folds=int(doc.get("k_folds", 5)),
            variance=str(variance),
            bootstrap_reps=int(doc.get("bootstrap_reps", 200)),
            seed=int(doc.get("seed", 0)),
        )
    except (FitError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid run config: {exc}") from exc
    kinds = doc.get("column_kinds", {})
    if not isinstance(kinds, dict):
        raise ConfigError("'column_kinds' must map column names to kinds")
    return RunConfig(
        graph_path=str(doc["graph"]),
        data_path=str(doc["data"]),
        settings=settings,
        na_token=str(doc.get("na_token", "NA")),
        column_kinds={str(k): str(v) for k, v in kinds.items()},
        overlap_floor=float(doc.get("overlap_floor", 0.05)),
        out_dir=str(doc["out_dir"]) if "out_dir" in doc else None,
        seed=int(doc["seed"]) if "seed" in doc else None,
    )


@dataclass
class StudyConfig:
    """A simulation study: the core settings plus runner directives."""

    sim: SimConfig
    mode: str = "study"  # or "sensitivity"
    out_dir: str | None = None
    seed_given: bool = False


def _resolve_graph(doc: object, base_dir: Path) -> PatternGraph:
    if doc is None:
        return default_study_graph()
    if isinstance(doc, str):
        if doc in BUILTIN_GRAPHS:
            return BUILTIN_GRAPHS[doc]()
        return load_graph(base_dir / doc if not Path(doc).is_absolute() else doc)
    raise ConfigError(f"'graph' must name a builtin graph or a JSON file, got {doc!r}")


def _resolve_odds(doc: object, graph: PatternGraph, odds_seed: int, theta) -> dict:
    if doc is None or doc == "default":
        if graph == default_study_graph():
            return default_odds(odds_seed)
        return calibrate_odds(graph, theta=theta, seed=odds_seed)
    if not isinstance(doc, dict):
        raise ConfigError("'odds' must be 'default' or a node->terms mapping")
    out = {}
    for key, terms in doc.items():
        p = Pattern.parse(str(key))
        parsed = []
        for term in terms:
            if not (isinstance(term, list) and len(term) == 2 and isinstance(term[1], list)):
                raise ConfigError(
                    f"odds term for {p} must be [coef, [exponents...]], got {term!r}"
                )
            parsed.append((float(term[0]), tuple(int(e) for e in term[1])))
        out[p] = tuple(parsed)
    return out


def load_study_config(path) -> StudyConfig:
    path = Path(path)
    doc = _load_document(path)
    allowed = {
        "n", "reps", "seed", "theta", "graph", "odds", "odds_seed", "methods",
        "lambda", "basis", "solver", "k_folds", "weight_cap", "mode", "out_dir",
    }
    _take(doc, allowed, "study config")
    mode = doc.get("mode", "study")
    if mode not in ("study", "sensitivity"):
        raise ConfigError(f"'mode' must be 'study' or 'sensitivity', got {mode!r}")
    theta = tuple(float(v) for v in doc.get("theta", DEFAULT_THETA))
    graph = _resolve_graph(doc.get("graph"), path.parent)
    odds_seed = int(doc.get("odds_seed", DEFAULT_ODDS_SEED))
    odds = _resolve_odds(doc.get("odds"), graph, odds_seed, theta)
    methods = doc.get("methods")
    if methods is None:
        methods = list(ALL_METHODS)
    if not isinstance(methods, list):
        raise ConfigError("'methods' must be a list")
    try:
        sim = SimConfig(
            n=int(doc.get("n", 1000)),
            reps=int(doc.get("reps", 100)),
            seed=int(doc.get("seed", 0)),
            theta=theta,
            graph=graph,
            odds=odds,
            methods=tuple(str(m) for m in methods),
            basis_cfg=(
                _basis_config(dict(doc["basis"])) if "basis" in doc else DEFAULT_STUDY_BASIS
            ),
            solver_opts=_solver_options(dict(doc.get("solver", {}))),
            lambda_policy=_lambda_policy(doc.get("lambda", DEFAULT_STUDY_LAMBDA)),
            k_folds=int(doc.get("k_folds", 5)),
            weight_cap=float(doc.get("weight_cap", 1e6)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid study config: {exc}") from exc
    return StudyConfig(
        sim=sim,
        mode=mode,
        out_dir=str(doc["out_dir"]) if "out_dir" in doc else None,
        seed_given="seed" in doc,
    )
