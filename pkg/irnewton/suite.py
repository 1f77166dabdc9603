"""Benchmark suite runs and Dolan-More performance profiles."""

import csv
import logging
import sys
import traceback
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from queue import Empty, Queue
from threading import Lock
from typing import Any, Callable, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from irnewton.core import IRNewtonError, SolverConfig, Status
from irnewton.driver import SOLVERS
from irnewton.problems import ProblemSpec, registry

_log = logging.getLogger(__name__)

PROFILE_METRICS = ("iterations", "hvp_count")
PROFILE_ALPHAS = tuple(np.round(np.arange(101) * 0.1, 1))


class SuiteFormatError(IRNewtonError):
    """Raised if a suite CSV cannot be read."""

    def __init__(self, path: Path, reason: str):
        """Create new format error with the path of the file and the reason."""
        super().__init__(f"Malformed suite file ({path}): {reason}")

        self.path = path
        self.reason = reason


@dataclass
class SuiteRow:
    """One (problem, solver) run summarized for the CSV output."""

    problem: str
    solver: str
    status: str
    iterations: int
    accepted: int
    newton_steps: int
    hvp_count: int
    tridiag_factorizations: int
    final_f: float
    final_grad_inf_norm: float
    wall_secs: float

    @classmethod
    def header(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def failed(cls, problem: str, solver: str) -> "SuiteRow":
        """Row of a pair whose run raised instead of returning a report."""
        nan = float("nan")
        return cls(
            problem=problem,
            solver=solver,
            status=Status.SUBPROBLEM_FAILURE.value,
            iterations=0,
            accepted=0,
            newton_steps=0,
            hvp_count=0,
            tridiag_factorizations=0,
            final_f=nan,
            final_grad_inf_norm=nan,
            wall_secs=nan,
        )

    def cells(self) -> List[str]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            out.append(format(value, ".17g") if isinstance(value, float) else str(value))
        return out


@dataclass
class SuiteResult:
    """All rows of a suite run, sorted by (problem, solver)."""

    rows: List[SuiteRow]

    def write_csv(self, out: TextIO):
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(SuiteRow.header())
        for row in self.rows:
            writer.writerow(row.cells())


def read_suite_csv(path: Path) -> List[SuiteRow]:
    """Read rows written by SuiteResult.write_csv."""
    try:
        with open(path, newline="", encoding="utf-8") as file:
            reader = csv.reader(file)
            header = next(reader, None)
            if header != SuiteRow.header():
                raise SuiteFormatError(path, f"unexpected header {header}")

            rows = []
            for line in reader:
                if len(line) != len(header):
                    raise SuiteFormatError(path, f"bad row {line}")
                values: Dict[str, Any] = dict(zip(header, line))
                for f in fields(SuiteRow):
                    if f.type is int:
                        values[f.name] = int(values[f.name])
                    elif f.type is float:
                        values[f.name] = float(values[f.name])
                rows.append(SuiteRow(**values))
            return rows
    except ValueError as e:
        raise SuiteFormatError(path, str(e)) from e


class SuiteRunner:
    """Runs every solver on every problem on a thread pool."""

    problems: List[ProblemSpec]
    solvers: List[str]
    config: SolverConfig
    seed: Optional[int] = None
    workers: Optional[int] = None

    on_run: Callable[[SuiteRow, float], Any]
    on_error: Callable[[Exception, float], Any]
    on_finish: Callable

    __events: Queue
    __lock: Lock
    __total: int
    __done: int
    __cancelled: bool = False

    def __init__(
        self,
        problems: Optional[Sequence[ProblemSpec]] = None,
        config: Optional[SolverConfig] = None,
    ):
        """Create new runner over given (default: all registered) problems."""
        self.problems = list(problems) if problems is not None else registry()
        self.solvers = sorted(SOLVERS)
        self.config = config if config is not None else SolverConfig()

    def run(self) -> SuiteResult:
        """Run all pairs and return the rows sorted by (problem, solver)."""
        self.__events = Queue()
        self.__done = 0
        self.__lock = Lock()
        pairs = [(p, s) for p in self.problems for s in self.solvers]
        self.__total = len(pairs)

        rows: List[SuiteRow] = []
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            futures = [executor.submit(self.__run_pair, p, s) for p, s in pairs]
            self.__run_event_loop(futures, rows)

        rows.sort(key=lambda row: (row.problem, row.solver))
        if getattr(self, "on_finish", False):
            self.on_finish()
        return SuiteResult(rows)

    def cancel(self) -> None:
        """Request cancellation; pairs not yet started are skipped."""
        self.__cancelled = True

    def __run_event_loop(self, futures: Sequence[Future], rows: List[SuiteRow]):
        while True:
            try:
                event = self.__events.get(timeout=1)

                if event[0] == "run":
                    rows.append(event[1])
                    if getattr(self, "on_run", False):
                        self.on_run(event[1], event[2])
                elif event[0] == "error":
                    rows.append(event[2])
                    if getattr(self, "on_error", False):
                        self.on_error(event[1], event[3])
            except Empty:
                pass

            if all(f.done() for f in futures) and self.__events.empty():
                break

    def __run_pair(self, spec: ProblemSpec, solver_name: str):
        if self.__cancelled:
            return

        try:
            solver = SOLVERS[solver_name](self.config)
            report = solver.solve(spec.build(), spec.start(self.seed))
            row = SuiteRow(
                problem=spec.name,
                solver=solver_name,
                status=report.status.value,
                iterations=report.iterations,
                accepted=report.accepted,
                newton_steps=report.newton_steps,
                hvp_count=report.hvp_count,
                tridiag_factorizations=report.tridiag_factorizations,
                final_f=report.final_f,
                final_grad_inf_norm=report.final_grad_inf_norm,
                wall_secs=report.wall_secs,
            )
            self.__trigger_event(("run", row))
        except IRNewtonError as e:
            _log.debug("%s/%s raised %r", spec.name, solver_name, e)
            self.__trigger_event(("error", e, SuiteRow.failed(spec.name, solver_name)))
        except Exception:  # pragma: no cover
            traceback.print_exc(file=sys.stderr)
            raise

    def __trigger_event(self, event_data: tuple) -> None:
        """Queue an event tagged with the progress in [0;1]."""
        with self.__lock:
            self.__done += 1
            self.__events.put((*event_data, self.__done / self.__total))


def run_suite(
    problems: Optional[Sequence[ProblemSpec]] = None,
    config: Optional[SolverConfig] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> SuiteResult:
    """Run both solvers on every problem."""
    runner = SuiteRunner(problems, config)
    runner.seed = seed
    runner.workers = workers
    return runner.run()


def performance_profile(
    rows: Sequence[SuiteRow], metric: str
) -> List[Tuple[str, float, float]]:
    """
    Return (solver, alpha, fraction) triples of a Dolan-More profile.

    The fraction is over problems every solver converged on; a problem where
    any solver failed is left out.
    """
    if metric not in PROFILE_METRICS:
        raise ValueError(f"unknown metric {metric}")

    solvers = sorted({row.solver for row in rows})
    by_problem: Dict[str, Dict[str, SuiteRow]] = {}
    for row in rows:
        by_problem.setdefault(row.problem, {})[row.solver] = row

    included = [
        runs
        for runs in by_problem.values()
        if len(runs) == len(solvers)
        and all(run.status == "Converged" for run in runs.values())
    ]
    if not included:
        _log.warning("No problem was solved by every solver")

    profile = []
    for solver in solvers:
        for alpha in PROFILE_ALPHAS:
            factor = 2.0**alpha
            solved = 0
            for runs in included:
                best = min(getattr(run, metric) for run in runs.values())
                if getattr(runs[solver], metric) <= factor * best:
                    solved += 1
            fraction = solved / len(included) if included else 0.0
            profile.append((solver, float(alpha), fraction))
    return profile


def emit_profile(csv_path: Path, metric: str, out: TextIO):
    """Write the profile of a suite CSV as solver,alpha,fraction rows."""
    profile = performance_profile(read_suite_csv(csv_path), metric)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["solver", "alpha", "fraction"])
    for solver, alpha, fraction in profile:
        writer.writerow([solver, format(alpha, ".1f"), format(fraction, ".17g")])
    return profile


def suite_failures(rows: Sequence[SuiteRow]) -> List[SuiteRow]:
    """Rows of pairs that did not converge."""
    return [row for row in rows if row.status != "Converged"]
