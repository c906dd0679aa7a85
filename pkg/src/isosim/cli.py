"""Command line: run scenarios, check traces, fuzz.

Exit status contract (stable): 0 clean, 1 violations found, 2 usage or
parse error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .checker import CheckerError, check_guarantees
from .fuzz import PROFILES, fuzz
from .platform import run_scenario
from .report import RunReport
from .scenario import ScenarioError, load_scenario
from .trace import load_trace, write_trace

EXIT_CLEAN = 0
EXIT_VIOLATIONS = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isosim",
        description="Deterministic simulator for hypervisor-free domain isolation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("scenario", help="path to the scenario file")
    p_run.add_argument("--trace", metavar="PATH", help="write the trace here (JSON lines)")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--max-steps", type=int, default=None)
    p_run.add_argument("--check", action="store_true",
                       help="check the guarantees after the run")
    p_run.add_argument("--format", choices=("table", "json"), default="table")

    p_check = sub.add_parser("check", help="check a recorded trace")
    p_check.add_argument("trace", help="path to the trace file")
    p_check.add_argument("scenario", help="scenario the trace was recorded from")
    p_check.add_argument("--format", choices=("table", "json"), default="table")

    p_fuzz = sub.add_parser("fuzz", help="run seeded adversarial scenarios")
    p_fuzz.add_argument("--seed", type=int, default=1)
    p_fuzz.add_argument("--count", type=int, default=100)
    p_fuzz.add_argument("--profile", choices=PROFILES, default="gic")
    p_fuzz.add_argument("--format", choices=("table", "json"), default="table")
    return parser


def _load(path: str):
    try:
        return load_scenario(path)
    except FileNotFoundError:
        print(f"error: no such file: {path}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    except ScenarioError as exc:
        for d in exc.diagnostics:
            print(f"{path}:{d}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def cmd_run(args) -> int:
    scenario = _load(args.scenario)
    trace = run_scenario(scenario, seed=args.seed, max_steps=args.max_steps)
    report = RunReport.from_trace(trace)
    violations = []
    if args.check:
        violations = check_guarantees(trace, scenario)
        report.violations = len(violations)
    if args.trace:
        write_trace(args.trace, trace)
        report.trace_path = args.trace
    if args.format == "json":
        out = report.to_dict()
        out["violation_records"] = [
            {"guarantee": v.guarantee, "step": v.step, "explanation": v.explanation}
            for v in violations
        ]
        print(json.dumps(out, sort_keys=True, indent=2))
    else:
        print(report.to_table())
        for v in violations:
            print(v)
    return EXIT_VIOLATIONS if violations else EXIT_CLEAN


def cmd_check(args) -> int:
    scenario = _load(args.scenario)
    try:
        trace = load_trace(args.trace)
    except FileNotFoundError:
        print(f"error: no such file: {args.trace}", file=sys.stderr)
        return EXIT_USAGE
    try:
        violations = check_guarantees(trace, scenario)
    except CheckerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.format == "json":
        print(json.dumps(
            [{"guarantee": v.guarantee, "step": v.step, "explanation": v.explanation}
             for v in violations],
            sort_keys=True, indent=2))
    else:
        if violations:
            for v in violations:
                print(v)
        else:
            print("clean: no violations")
    return EXIT_VIOLATIONS if violations else EXIT_CLEAN


def cmd_fuzz(args) -> int:
    summary = fuzz(args.seed, args.count, args.profile)
    if args.format == "json":
        print(json.dumps(summary.to_dict(), sort_keys=True, indent=2))
    else:
        d = summary.to_dict()
        print(f"profile {d['profile']}  seed {d['seed']}  runs {d['runs']}")
        print(f"violations {d['total_violations']}  denials {d['denials']}  "
              f"deliveries {d['deliveries']}  protocol_errors {d['protocol_errors']}")
        for index, guarantee, why in summary.failures:
            print(f"  run {index}: [{guarantee}] {why}")
    return EXIT_VIOLATIONS if summary.total_violations else EXIT_CLEAN


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return EXIT_USAGE if exc.code not in (0,) else 0
    handlers = {"run": cmd_run, "check": cmd_check, "fuzz": cmd_fuzz}
    try:
        return handlers[args.command](args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
