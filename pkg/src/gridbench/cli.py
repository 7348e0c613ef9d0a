"""Command line entry point.

    gridbench run <config>              full evaluation, writes the output directory
    gridbench validate <config>         print every config problem, exit 1 if any
    gridbench export-baseline <config>  write the DCOPF baseline as a trajectory file

Exit codes: 0 success, 1 config error, 2 runtime error, 3 every scenario infeasible.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, load_config, validate
from .errors import GridbenchError
from .pipeline import AllInfeasibleError, export_baseline, run

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("gridbench")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "evaluate every configured policy"),
        ("validate", "check a config and print all diagnostics"),
        ("export-baseline", "write the DCOPF baseline trajectories"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", type=Path)
        p.add_argument("-v", "--verbose", action="count", default=0,
                       help="log to stderr (-v info, -vv debug)")
        if name != "validate":
            p.add_argument("--output-dir", type=Path, default=None,
                           help="override the config's output directory")
        if name == "export-baseline":
            p.add_argument("--output", type=Path, default=None,
                           help="trajectory file path (default <output-dir>/baseline_trajectories.json)")
    return parser


def _setup_logging(verbosity: int) -> None:
    if verbosity <= 0:
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if verbosity > 1 else logging.INFO)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    _setup_logging(args.verbose)

    if args.command == "validate":
        diags = validate(args.config)
        for d in diags:
            print(d)
        if not diags:
            print(f"{args.config}: ok")
        return EXIT_CONFIG if diags else EXIT_OK

    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        for d in err.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            result = run(cfg, output_dir=args.output_dir)
            for name, report in result.reports.items():
                agg = report.aggregate
                print(f"{name}: rce={agg['rce']:.6g} rvs={agg['rvs']:.6g} rvm={agg['rvm']:.6g} "
                      f"nvc={agg['nvc']:.6g} nvt={agg['nvt']:.6g} eta={agg['eta']:.4g}% "
                      f"({agg['n_scored']} scored, {agg['n_skipped']} skipped)")
            print(f"outputs in {result.output_dir}")
        else:
            output = args.output
            if output is None and args.output_dir is not None:
                output = args.output_dir / "baseline_trajectories.json"
            print(export_baseline(cfg, output))
    except AllInfeasibleError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except GridbenchError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
