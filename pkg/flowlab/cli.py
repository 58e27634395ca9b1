#!/usr/bin/env python3
"""
Flow Lab Command Line Interface
Runs one experiment per subcommand, or lists the field catalog
"""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import numpy as np
from rich import box
from rich.console import Console
from rich.table import Table

from .errors import EXIT_CONFIG, EXIT_OK, ConfigError, FlowLabError, NoAnalyticJacobian
from .expressions import load_field_expression
from .experiments import SUBCOMMAND_EXPERIMENTS, RunResult, load_config, run
from .field_core import (CENTRAL_DIFFERENCE, VectorFieldSpec, divergence, eval_field,
                         jacobian_agreement)
from .field_catalog import builtin_catalog, builtin_fields, verify_pair_metadata
from .reporting import SCHEMA_VERSION, format_number
from .settings import configure_logging
from .streams import block_generator

logger = logging.getLogger("flowlab-cli")

PROBE_SEED = 0
PROBE_COUNT = 256


class ErrorRecord:
    """One machine-readable failure line for stderr"""

    def __init__(self, error: FlowLabError, experiment: Optional[str] = None):
        self.timestamp = datetime.now(timezone.utc).isoformat()
        self.error = error
        self.experiment = experiment

    def to_dict(self) -> Dict[str, Any]:
        record = self.error.to_dict()
        record.update({
            "experiment": self.experiment,
            "timestamp": self.timestamp,
            "schema_version": SCHEMA_VERSION,
        })
        return record

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowlab",
                                     description="Numerical lab for flows of rough vector fields")
    parser.add_argument("--config", type=str, help="Experiment config file")
    parser.add_argument("--seed", type=int, help="Master seed (overrides the config)")
    parser.add_argument("--out", type=str, help="Output directory")
    parser.add_argument("--plots", action="store_true", default=None, help="Also write SVG plots")
    parser.add_argument("--workers", type=int, help="Worker processes")
    parser.add_argument("--log-level", type=str, help="Logging level")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    subparsers.add_parser("defect", help="Commutator defect statistics over (s, t)")
    subparsers.add_parser("ladder", help="Residual ladders A, B, R and scaling slopes")
    subparsers.add_parser("compress", help="Push-forward density and compressibility")
    subparsers.add_parser("maximal", help="Maximal and sharp maximal functions")
    subparsers.add_parser("sobolev", help="Pointwise Sobolev audits")
    subparsers.add_parser("concentrate", help="Concentration residual on trajectory ensembles")
    subparsers.add_parser("stability", help="Stability bound audit for two flows")

    catalog_parser = subparsers.add_parser("catalog", help="List built-in pairs and fields")
    catalog_parser.add_argument("--expression", type=str, help="Also load and check a field file")
    catalog_parser.add_argument("--json", action="store_true", help="JSON output")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {"seed": args.seed, "out": args.out, "plots": args.plots, "workers": args.workers}


def _probe_points(field: VectorFieldSpec, half_width: float = 2.0) -> np.ndarray:
    rng = block_generator(PROBE_SEED, 0, tag=f"probe:{field.name}")
    pts = rng.uniform(-half_width, half_width, (PROBE_COUNT, field.dim))
    return pts[field.singular_distance(pts) > 0.05]


def describe_field(field: VectorFieldSpec) -> Dict[str, Any]:
    """Sanity numbers for one field at seeded probe points"""
    pts = _probe_points(field)
    values = eval_field(field, pts)
    row = {
        "name": field.name,
        "dim": field.dim,
        "time_dependent": field.time_dependent,
        "singular": field.singular_set is not None,
        "max_norm": float(np.max(np.linalg.norm(values, axis=1), initial=0.0)),
        "max_abs_divergence": None,
        "jacobian_gap": None,
        "description": field.description,
    }
    try:
        row["max_abs_divergence"] = float(np.max(np.abs(divergence(field, pts)), initial=0.0))
        row["jacobian_gap"] = jacobian_agreement(field, pts)
    except NoAnalyticJacobian:
        div = divergence(field, pts, method=CENTRAL_DIFFERENCE)
        row["max_abs_divergence"] = float(np.max(np.abs(div), initial=0.0))
    return row


def catalog_rows() -> Dict[str, List[Dict[str, Any]]]:
    pairs = []
    for pair in builtin_catalog():
        pairs.append({
            "name": pair.name,
            "dim": pair.dim,
            "bracket_vanishes_ae": pair.bracket_vanishes_ae,
            "max_bracket": verify_pair_metadata(pair, samples=PROBE_COUNT, seed=PROBE_SEED),
            "oracle": pair.oracle is not None,
            "description": pair.description,
        })
    fields = [describe_field(f) for _, f in sorted(builtin_fields().items())]
    return {"pairs": pairs, "fields": fields}


def print_catalog(rows: Dict[str, List[Dict[str, Any]]], console: Console) -> None:
    pairs = Table(title="Field pairs", box=box.SIMPLE)
    pairs.add_column("Pair", style="cyan")
    pairs.add_column("Dim", justify="right")
    pairs.add_column("[V1,V2]=0 a.e.", style="yellow")
    pairs.add_column("Max |bracket|", justify="right", style="green")
    pairs.add_column("Oracle")
    pairs.add_column("Description", style="white")
    for p in rows["pairs"]:
        pairs.add_row(p["name"], str(p["dim"]), "yes" if p["bracket_vanishes_ae"] else "no",
                      f"{p['max_bracket']:.3g}", "yes" if p["oracle"] else "-", p["description"])
    console.print(pairs)

    fields = Table(title="Fields", box=box.SIMPLE)
    fields.add_column("Field", style="cyan")
    fields.add_column("Dim", justify="right")
    fields.add_column("Max |V|", justify="right")
    fields.add_column("Max |div V|", justify="right")
    fields.add_column("Jacobian gap", justify="right", style="green")
    fields.add_column("Flags", style="yellow")
    for f in rows["fields"]:
        flags = ",".join(name for name, on in (("t", f["time_dependent"]), ("sing", f["singular"])) if on)
        gap = "-" if f["jacobian_gap"] is None else f"{f['jacobian_gap']:.2g}"
        fields.add_row(f["name"], str(f["dim"]), f"{f['max_norm']:.3g}",
                       f"{f['max_abs_divergence']:.3g}", gap, flags or "-")
    console.print(fields)


def run_catalog(args: argparse.Namespace, console: Console) -> int:
    rows = catalog_rows()
    if args.expression:
        rows["fields"].append(describe_field(load_field_expression(args.expression)))
    if args.json:
        print(json.dumps(rows, indent=2, default=str))
    else:
        print_catalog(rows, console)
    return EXIT_OK


def print_run_summary(result: RunResult, console: Console) -> None:
    table = Table(title=f"{result.experiment} ({result.digest[:12]})", box=box.SIMPLE)
    table.add_column("Key", style="yellow")
    table.add_column("Value", style="green")
    for key, value in result.summary.items():
        if isinstance(value, (dict, list)):
            continue
        table.add_row(key, format_number(value))
    console.print(table)
    console.print(f"Wrote {len(result.artifacts)} file(s) to {result.out_dir}")


def run_experiment(args: argparse.Namespace, console: Console) -> int:
    experiment = SUBCOMMAND_EXPERIMENTS[args.command]
    config = load_config(args.config, _overrides(args), defaults={"experiment": experiment})
    if config.experiment != experiment:
        raise ConfigError(f"config describes {config.experiment!r}, "
                          f"subcommand {args.command!r} runs {experiment!r}")
    result = run(config)
    print_run_summary(result, console)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    if not args.command:
        parser.print_help()
        return EXIT_CONFIG

    console = Console(stderr=False)
    experiment = SUBCOMMAND_EXPERIMENTS.get(args.command)
    try:
        if args.command == "catalog":
            return run_catalog(args, console)
        return run_experiment(args, console)
    except FlowLabError as e:
        logger.debug("run failed", exc_info=True)
        print(ErrorRecord(e, experiment).to_json(), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
