"""Command-line driver: run experiment documents, emit value grids.

``homcert run <spec.json>`` executes the document and writes its JSON
report; the exit code is 0 exactly when every requested certificate passed.
``homcert grid <spec.json>`` writes the per-cell optimal-value CSV for grid
environments.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .experiment import (
    ExperimentSpec,
    SpecError,
    load_document,
    render_grid_csv,
    render_report,
    run_experiment,
)

EXIT_OK = 0
EXIT_CERT_FAILED = 1
EXIT_SPEC_ERROR = 2
EXIT_RUNTIME_ERROR = 3


def _apply_overrides(spec: ExperimentSpec, args: argparse.Namespace) -> ExperimentSpec:
    if args.gamma is not None:
        spec.gamma = args.gamma
    if args.horizon is not None:
        spec.horizon = args.horizon
    if args.tol is not None:
        spec.tolerance = args.tol
    if args.seed is not None:
        spec.seed = args.seed
    if args.out is not None:
        spec.report_path = args.out
    if not (0.0 <= spec.gamma < 1.0) or spec.horizon < 1:
        raise SpecError("overrides left gamma or horizon out of range")
    if spec.depth > spec.horizon:
        raise SpecError("depth must not exceed the horizon")
    return spec


def _diagnostic(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        spec = _apply_overrides(load_document(args.spec), args)
    except SpecError as exc:
        _diagnostic("spec", str(exc))
        return EXIT_SPEC_ERROR
    try:
        report, all_passed = run_experiment(spec)
    except SpecError as exc:
        _diagnostic("spec", str(exc))
        return EXIT_SPEC_ERROR
    except Exception as exc:  # cap, uplift, degenerate-support, solver errors
        _diagnostic(type(exc).__name__, str(exc))
        return EXIT_RUNTIME_ERROR
    text = render_report(report)
    if spec.report_path:
        with open(spec.report_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all_passed else EXIT_CERT_FAILED


def _cmd_grid(args: argparse.Namespace) -> int:
    try:
        spec = _apply_overrides(load_document(args.spec), args)
        csv_text = render_grid_csv(spec)
    except SpecError as exc:
        _diagnostic("spec", str(exc))
        return EXIT_SPEC_ERROR
    except Exception as exc:
        _diagnostic(type(exc).__name__, str(exc))
        return EXIT_RUNTIME_ERROR
    target = args.out or spec.grid_csv_path
    if target:
        with open(target, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homcert",
        description="Certify abstraction performance-loss bounds on finite instances.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in (
        ("run", _cmd_run, "run an experiment document and write its report"),
        ("grid", _cmd_grid, "emit the per-cell optimal value grid as CSV"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("spec", help="path to the experiment JSON document")
        p.add_argument("--horizon", type=int, default=None,
                       help="override the truncation horizon")
        p.add_argument("--gamma", type=float, default=None,
                       help="override the discount factor")
        p.add_argument("--tol", type=float, default=None,
                       help="override the solver tolerance")
        p.add_argument("--seed", type=int, default=None,
                       help="override the document seed")
        p.add_argument("--out", type=str, default=None,
                       help="override the output path")
        p.set_defaults(fn=fn)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
