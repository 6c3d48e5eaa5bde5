"""Command-line interface: validate graphs, fit datasets, run studies.

Exit codes: 0 on success, 1 for domain failures (irregular graphs,
incompatible data, fits that cannot be completed), 2 for usage, parse
and file errors.  When both the config file and a flag set the same
value the config file wins and a warning is printed.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .config import load_run_config, load_study_config
from .data import load_csv
from .errors import ConfigError, DataError, FitError, GraphError
from .patterns import load_graph
from .pipeline import run_fit
from .report import (
    fit_table_text,
    study_summary_text,
    write_fit_outputs,
    write_study_outputs,
)
from .simulate import run_study, sensitivity_graphs, sensitivity_study

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqbalance",
        description="Balancing-weight estimation for non-monotone missing data on pattern graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a pattern graph file for regularity")
    p_val.add_argument("graph", help="path to a graph JSON file")

    p_fit = sub.add_parser("fit", help="fit weights and the outcome model per a run config")
    p_fit.add_argument("config", help="path to a TOML or JSON run config")
    p_fit.add_argument("--out", help="output directory (config file wins if it also sets one)")
    p_fit.add_argument("--seed", type=int, help="seed (config file wins if it also sets one)")
    p_fit.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker processes (reserved for future use on this path)")

    p_sim = sub.add_parser("simulate", help="run a replication study per a study config")
    p_sim.add_argument("config", help="path to a TOML or JSON study config")
    p_sim.add_argument("--out", help="output directory (config file wins if it also sets one)")
    p_sim.add_argument("--seed", type=int, help="seed (config file wins if it also sets one)")
    p_sim.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker processes for replicates")
    return parser


def _warn_override(name: str) -> None:
    print(f"warning: config file sets {name}; ignoring the --{name} flag", file=sys.stderr)


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        g = load_graph(args.graph)
    except GraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = g.validate()
    if report.is_regular:
        print(f"graph is regular: {len(g.nodes)} nodes, {len(g.edges)} edges")
        return EXIT_OK
    for line in report.violations:
        print(line)
    return EXIT_DOMAIN


def cmd_fit(args: argparse.Namespace) -> int:
    try:
        cfg = load_run_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out_dir = cfg.out_dir
    if args.out is not None:
        if out_dir is not None:
            _warn_override("out")
        else:
            out_dir = args.out
    if out_dir is None:
        out_dir = "out"
    settings = cfg.settings
    if args.seed is not None:
        if cfg.seed is not None:
            _warn_override("seed")
        else:
            settings = dataclasses.replace(settings, seed=args.seed)

    base = Path(args.config).parent

    def _resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else base / path

    try:
        g = load_graph(_resolve(cfg.graph_path))
    except GraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = g.validate()
    if not report.is_regular:
        print("graph is not regular:", file=sys.stderr)
        for line in report.violations:
            print(f"  {line}", file=sys.stderr)
        return EXIT_DOMAIN
    try:
        ds = load_csv(_resolve(cfg.data_path), na_token=cfg.na_token, column_kinds=cfg.column_kinds)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    compat = ds.check_against_graph(g, overlap_floor=cfg.overlap_floor)
    for line in compat.warnings:
        print(f"warning: {line}", file=sys.stderr)
    if not compat.ok:
        for line in compat.fatal:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_DOMAIN
    try:
        artifacts = run_fit(ds, g, settings)
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    write_fit_outputs(Path(out_dir), artifacts.fit, artifacts.weight_set, artifacts.balance)
    print(fit_table_text(artifacts.fit), end="")
    print(f"outputs written to {out_dir}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        cfg = load_study_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out_dir = cfg.out_dir
    if args.out is not None:
        if out_dir is not None:
            _warn_override("out")
        else:
            out_dir = args.out
    if out_dir is None:
        out_dir = "out"
    sim = cfg.sim
    if args.seed is not None:
        if cfg.seed_given:
            _warn_override("seed")
        else:
            sim = dataclasses.replace(sim, seed=args.seed)

    try:
        if cfg.mode == "sensitivity":
            study = sensitivity_study(sim, sensitivity_graphs(), threads=args.threads)
        else:
            study = run_study(sim, threads=args.threads)
    except (FitError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    write_study_outputs(Path(out_dir), study)
    print(study_summary_text(study), end="")
    print(f"outputs written to {out_dir}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    if args.command == "validate":
        return cmd_validate(args)
    if args.command == "fit":
        return cmd_fit(args)
    return cmd_simulate(args)


if __name__ == "__main__":
    sys.exit(main())
