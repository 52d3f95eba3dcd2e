"""Command-line entry point.

Usage::

    deepteams riccati --scenario smart_grid.scenario --out run1
    deepteams pg --scenario smart_grid.scenario --seed 1 --override iters=2000
    deepteams example smart-grid --out example

The log level is read from ``DEEPTEAMS_LOG_LEVEL`` (default WARNING).  Exit
codes: 0 success, 2 usage or scenario error, 3 invalid input, 4 no
convergence, 5 assumption violated, 6 divergence, 7 enumeration bound, 1 other.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

from .errors import DeepTeamsError
from .scenario import load_scenario
from .tasks import run_smart_grid_example, run_task

TASK_COMMANDS = ("plan-dss", "plan-ns", "qlearn", "riccati", "pg", "simulate", "evaluate")
EXAMPLES = ("smart-grid",)


def _common(p: argparse.ArgumentParser, need_scenario: bool):
    p.add_argument("--scenario", required=need_scenario, metavar="PATH", help="scenario file (YAML)")
    p.add_argument("--seed", type=int, default=None, metavar="N", help="override the scenario seed")
    p.add_argument("--out", default=None, metavar="DIR", help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario entry; dotted keys address sections (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepteams", description="Deep structured team experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in TASK_COMMANDS:
        _common(sub.add_parser(name, help=f"run the {name} task"), need_scenario=True)
    ex = sub.add_parser("example", help="run a bundled example")
    ex.add_argument("name", choices=EXAMPLES)
    _common(ex, need_scenario=False)
    return parser


def _seed_overrides(command: str, seed: Optional[int]) -> List[str]:
    if seed is None:
        return []
    out = [f"seed={seed}"]
    if command in ("pg", "example"):
        out.append(f"hyperparameters.seeds=[{seed}]")
    return out


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("DEEPTEAMS_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    overrides = list(args.override) + _seed_overrides(args.command, args.seed)
    try:
        if args.command == "example":
            if args.scenario:
                cfg = load_scenario(args.scenario, overrides)
                manifest = run_task(cfg, out_dir=args.out or "example-smart-grid", task="example")
            else:
                manifest = run_smart_grid_example(overrides, out_dir=args.out or "example-smart-grid")
        else:
            cfg = load_scenario(args.scenario, overrides)
            manifest = run_task(cfg, out_dir=args.out, task=args.command)
    except DeepTeamsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    for entry in manifest.outputs:
        print(f"{entry['path']}  {entry['sha256']}")
    return 0
