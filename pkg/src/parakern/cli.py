"""Command-line driver: program file + machine file -> case artifacts.

Pipeline: parse the annotated source, load the machine description, run the
comprehensive optimization, verify coverage and per-counter exhaustion,
then write the kernel files, case report, and tree exports.

Exit status: 0 on success; 1 on parse, classification, or configuration
errors (diagnostics on stderr); 2 when verification reports violations
(artifacts are still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import dsl
from .counters import CounterError
from .emit import EmitError, write_artifacts
from .engine import EngineError, Optimizer, verify_coverage, verify_optimality
from .machine import MachineError, load_machine


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parakern",
        description="Compile an annotated parallel loop nest into a case "
        "discussion of optimized parametric kernels.",
    )
    parser.add_argument("program", help="annotated loop-nest source file")
    parser.add_argument("machine", help="machine description file")
    parser.add_argument(
        "--grid-stride", type=int, metavar="N",
        help="override the machine's grid-stride cap",
    )
    parser.add_argument(
        "--budget", type=int, metavar="N",
        help="override the witness-search budget",
    )
    parser.add_argument(
        "--samples", type=int, metavar="N",
        help="override the coverage sample count",
    )
    parser.add_argument(
        "--no-verify", action="store_true",
        help="skip coverage and exhaustion verification",
    )
    parser.add_argument(
        "--explain", action="store_true",
        help="include per-node decision values in the report",
    )
    parser.add_argument(
        "--out", metavar="DIR", default=".",
        help="directory for the artifacts (default: current directory)",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.program) as fh:
            source = fh.read()
        program = dsl.parse(source)
        machine = load_machine(args.machine)
        if args.grid_stride is not None:
            if args.grid_stride <= 0:
                raise MachineError("--grid-stride must be positive")
            machine = dataclasses.replace(machine, grid_stride=args.grid_stride)
        optimizer = Optimizer(program, machine, budget=args.budget)
        result = optimizer.run()
    except (OSError, dsl.DslError, MachineError, CounterError, EngineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    name = os.path.splitext(os.path.basename(args.program))[0]
    try:
        paths = write_artifacts(result, args.out, name=name, explain=args.explain)
    except (EmitError, CounterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"cases: {len(result.cases)}")
    print(f"decision height: {result.tree.height()}")
    for path in paths:
        print(f"wrote {path}")

    if args.no_verify:
        return 0
    status = 0
    coverage = verify_coverage(result, samples=args.samples)
    if not coverage.ok:
        status = 2
        for point in coverage.violations[:10]:
            values = ", ".join(f"{k}={v}" for k, v in sorted(point.items()))
            print(f"uncovered: {values}", file=sys.stderr)
        more = len(coverage.violations) - 10
        if more > 0:
            print(f"uncovered: ... and {more} more points", file=sys.stderr)
    exhaustion = verify_optimality(result, optimizer)
    if not exhaustion.ok:
        status = 2
        for counter, reason in exhaustion.entries:
            print(f"counter {counter} not exhausted at any leaf: {reason}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
