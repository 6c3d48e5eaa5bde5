"""Rendering fit and study results to text, delimited files and figures.

Figures are written next to the delimited outputs on the report path;
CSV and JSON artifacts are byte-stable for a fixed configuration and
seed, figures are best-effort renderings of the same numbers.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .estimator import FitResult
from .simulate import StudyResult
from .weights import WeightSet


def fit_table_text(fit: FitResult) -> str:
    """Human-readable parameter table: estimate and p-value per row."""
    name_w = max(len("parameter"), max(len(n) for n in fit.parameter_names))
    lines = [
        f"method: {fit.method}   N = {fit.n}   complete cases = {fit.n_complete}   "
        f"variance: {fit.variance_method}",
        f"{'parameter'.ljust(name_w)}  {'estimate':>10}  {'p-value':>10}",
    ]
    for name, est, p in zip(fit.parameter_names, fit.theta, fit.p_values):
        lines.append(f"{name.ljust(name_w)}  {est:>10.4f}  {p:>10.3g}")
    return "\n".join(lines) + "\n"


def weights_frame(ws: WeightSet) -> pd.DataFrame:
    """Per-complete-row component table: row id, pattern, components, total."""
    complete = max(ws.q, key=lambda p: p.n_observed)
    data: dict[str, object] = {
        "row_id": ws.complete_rows,
        "pattern": [str(complete)] * ws.complete_rows.size,
    }
    for r in sorted(ws.q, key=str):
        data[f"q_{r}"] = ws.q[r]
    data["w"] = ws.w
    return pd.DataFrame(data)


def write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def balance_figure(balance: pd.DataFrame, path: Path) -> None:
    """Per-pattern balance gaps against their penalty slack bounds."""
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    if len(balance):
        patterns = sorted(balance["pattern"].unique())
        for i, pat in enumerate(patterns):
            sub = balance[balance["pattern"] == pat]
            x = np.full(len(sub), i, dtype=float) + np.linspace(-0.25, 0.25, len(sub))
            ax.scatter(x, np.maximum(sub["gap"], 1e-16), s=12, label=f"{pat} gap")
            ax.scatter(
                x, np.maximum(sub["slack"], 1e-16), s=12, marker="_", color="k",
                label="slack bound" if i == 0 else None,
            )
        ax.set_xticks(range(len(patterns)))
        ax.set_xticklabels(patterns, rotation=45, ha="right")
        ax.set_yscale("log")
    ax.set_ylabel("absolute balance gap (per-N scale)")
    ax.set_xlabel("pattern")
    ax.set_title("covariate balance by pattern and basis term")
    handles, labels = ax.get_legend_handles_labels()
    if handles:
        seen: dict[str, object] = {}
        for h, l in zip(handles, labels):
            if l is not None and l not in seen and not l.endswith("gap"):
                seen[l] = h
        if seen:
            ax.legend(seen.values(), seen.keys(), loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def weights_figure(ws: WeightSet, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.hist(ws.w, bins=40, color="steelblue", edgecolor="white")
    ax.set_xlabel("estimated weight on complete cases")
    ax.set_ylabel("count")
    ax.set_title("weight distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_fit_outputs(
    outdir: Path,
    fit: FitResult,
    ws: WeightSet,
    balance: pd.DataFrame,
) -> list[Path]:
    """Write fit.json, weights.csv, balance.csv, summary.txt and figures."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    p = outdir / "fit.json"
    write_json(p, fit.to_dict())
    written.append(p)

    p = outdir / "weights.csv"
    weights_frame(ws).to_csv(p, index=False)
    written.append(p)

    p = outdir / "balance.csv"
    balance.to_csv(p, index=False)
    written.append(p)

    p = outdir / "summary.txt"
    p.write_text(fit_table_text(fit), encoding="utf-8")
    written.append(p)

    p = outdir / "weights.png"
    weights_figure(ws, p)
    written.append(p)
    if len(balance):
        p = outdir / "balance.png"
        balance_figure(balance, p)
        written.append(p)
    return written


def study_summary_text(study: StudyResult) -> str:
    lines = ["method     graph      |bias|_1    |mse|_2   failed"]
    for s in study.summaries:
        lines.append(
            f"{s.method:<10} {s.graph_label:<10} {s.bias_l1:>8.3f}  {s.mse_l2:>9.3f}   "
            f"{s.n_failed}/{s.n_reps}"
        )
    return "\n".join(lines) + "\n"


def study_figure(study: StudyResult, path: Path) -> None:
    """Aggregate error norms per method (grouped by analysis graph)."""
    frame = study.to_frame()
    agg = frame[frame["coef"] == "aggregate"].reset_index(drop=True)
    fig, axes = plt.subplots(1, 2, figsize=(10.0, 4.0))
    labels = [f"{m}/{g}" for m, g in zip(agg["method"], agg["graph"])]
    x = np.arange(len(labels))
    axes[0].bar(x, agg["bias"], color="indianred")
    axes[0].set_title("aggregate |bias| (L1)")
    axes[1].bar(x, agg["mse"], color="steelblue")
    axes[1].set_title("aggregate MSE norm (L2)")
    for ax in axes:
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=45, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_study_outputs(outdir: Path, study: StudyResult) -> list[Path]:
    """Write study.csv, study_summary.txt and the aggregate figure."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    p = outdir / "study.csv"
    study.to_frame().to_csv(p, index=False)
    written.append(p)
    p = outdir / "study_summary.txt"
    p.write_text(study_summary_text(study), encoding="utf-8")
    written.append(p)
    p = outdir / "study.png"
    study_figure(study, p)
    written.append(p)
    return written
