"""Command-line harness: single runs, suite runs and performance profiles."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, NoReturn, Optional

from irnewton import __version__
from irnewton.core import IRNewtonError, SolverConfig, Status
from irnewton.driver import SOLVERS
from irnewton.problems import RANDOM_SEED, get_problem, problem_names, registry
from irnewton.suite import (
    PROFILE_METRICS,
    SuiteRow,
    SuiteRunner,
    emit_profile,
    suite_failures,
)

_log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_LIMIT = 2


class ArgumentParser(argparse.ArgumentParser):
    """Parser reporting usage errors with the configuration error status."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="irnewton",
        description="Regularized Newton and inexact ARC benchmark harness.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log solver progress"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run one solver on one problem")
    run.add_argument("--problem", required=True, help=", ".join(problem_names()))
    run.add_argument("--solver", required=True, choices=sorted(SOLVERS))
    run.add_argument("--config", type=Path, help="JSON file overriding defaults")
    run.add_argument("--seed", type=int, default=RANDOM_SEED)
    run.add_argument(
        "--random-start",
        action="store_true",
        help="start from x0 + U[-1,1]^n drawn with the seed",
    )

    suite = commands.add_parser("suite", help="run both solvers on every problem")
    suite.add_argument("--out", required=True, type=Path, help="CSV output file")
    suite.add_argument("--problems", help="comma-separated problem names")
    suite.add_argument("--config", type=Path, help="JSON file overriding defaults")
    suite.add_argument(
        "--seed", type=int, help="start every problem from a random point"
    )
    suite.add_argument("--workers", type=int, help="number of worker threads")

    profile = commands.add_parser("profile", help="performance profile of a suite")
    profile.add_argument("--csv", required=True, type=Path, help="suite CSV file")
    profile.add_argument("--metric", required=True, choices=PROFILE_METRICS)
    profile.add_argument("--out", type=Path, help="output file (default: stdout)")

    return parser


def load_config(path: Optional[Path]) -> SolverConfig:
    if path is None:
        return SolverConfig()
    return SolverConfig.from_json(path)


def run_single(args: argparse.Namespace) -> int:
    """Run one solver and print its report as a JSON record."""
    spec = get_problem(args.problem)
    cfg = load_config(args.config)
    x0 = spec.start(args.seed if args.random_start else None)

    report = SOLVERS[args.solver](cfg).solve(spec.build(), x0)

    record = report.scalars()
    record["config"] = cfg.to_dict()
    record["seed"] = args.seed
    record["random_start"] = args.random_start
    print(json.dumps(record))

    return EXIT_OK if report.status is Status.CONVERGED else EXIT_LIMIT


def run_suite(args: argparse.Namespace) -> int:
    """Run the suite and write one CSV row per (problem, solver) pair."""
    cfg = load_config(args.config)
    if args.problems:
        problems = [get_problem(name.strip()) for name in args.problems.split(",")]
    else:
        problems = registry()

    runner = SuiteRunner(problems, cfg)
    runner.seed = args.seed
    runner.workers = args.workers
    runner.on_run = _on_run
    runner.on_error = _on_error

    with open(args.out, "w", newline="", encoding="utf-8") as out:
        result = runner.run()
        result.write_csv(out)

    _log.info("Wrote %d rows to %s", len(result.rows), args.out)
    failed = suite_failures(result.rows)
    if failed:
        _log.warning("%d of %d runs did not converge", len(failed), len(result.rows))
    return EXIT_OK


def run_profile(args: argparse.Namespace) -> int:
    """Write the performance profile of a suite CSV."""
    if args.out is None:
        emit_profile(args.csv, args.metric, sys.stdout)
    else:
        with open(args.out, "w", newline="", encoding="utf-8") as out:
            emit_profile(args.csv, args.metric, out)
    return EXIT_OK


def _on_run(row: SuiteRow, progress: float):
    _log.info(
        "[%3d%%] %s/%s: %s in %d iterations",
        round(progress * 100),
        row.problem,
        row.solver,
        row.status,
        row.iterations,
    )


def _on_error(exception: Exception, progress: float):
    _log.error("[%3d%%] %s", round(progress * 100), exception)


COMMANDS = {
    "run": run_single,
    "suite": run_suite,
    "profile": run_profile,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the command and return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_ERROR

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        return COMMANDS[args.command](args)
    except (IRNewtonError, OSError) as e:
        print(f"irnewton: error: {e}", file=sys.stderr)
        return EXIT_ERROR
