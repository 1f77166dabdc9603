import io
import math
import tempfile
import unittest
from pathlib import Path
from unittest.mock import Mock

import numpy as np

from irnewton.core import ConfigError, SolverConfig
from irnewton.problems import ProblemSpec, get_problem, registry, rosenbrock
from irnewton.suite import (
    PROFILE_ALPHAS,
    SuiteFormatError,
    SuiteResult,
    SuiteRow,
    SuiteRunner,
    emit_profile,
    performance_profile,
    read_suite_csv,
    run_suite,
    suite_failures,
)

HEADER = (
    "problem,solver,status,iterations,accepted,newton_steps,hvp_count,"
    "tridiag_factorizations,final_f,final_grad_inf_norm,wall_secs"
)


def make_row(problem: str, solver: str, iterations: int, hvp_count: int = 10, status="Converged"):
    return SuiteRow(
        problem=problem,
        solver=solver,
        status=status,
        iterations=iterations,
        accepted=iterations,
        newton_steps=0,
        hvp_count=hvp_count,
        tridiag_factorizations=0,
        final_f=0.0,
        final_grad_inf_norm=1e-9,
        wall_secs=0.01,
    )


def fractions(profile, solver):
    return [fraction for name, _, fraction in profile if name == solver]


class SuiteRunCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.problems = [get_problem("quadratic5"), get_problem("rosenbrock2")]
        cls.result = run_suite(cls.problems, workers=2)

    def test_one_row_per_pair(self):
        pairs = [(row.problem, row.solver) for row in self.result.rows]

        self.assertEqual(
            pairs,
            [
                ("quadratic5", "iarc"),
                ("quadratic5", "irnewton"),
                ("rosenbrock2", "iarc"),
                ("rosenbrock2", "irnewton"),
            ],
        )

    def test_all_converged(self):
        self.assertEqual(suite_failures(self.result.rows), [])

    def test_convex_quadratic_needs_no_factorization(self):
        row = next(
            r for r in self.result.rows if r.problem == "quadratic5" and r.solver == "irnewton"
        )

        self.assertEqual(row.newton_steps, row.iterations)
        self.assertEqual(row.tridiag_factorizations, 0)

    def test_deterministic(self):
        again = run_suite(self.problems, workers=1)

        for a, b in zip(self.result.rows, again.rows):
            a.wall_secs = b.wall_secs = 0.0
        self.assertEqual(self.result.rows, again.rows)

    def test_csv_header(self):
        out = io.StringIO()
        self.result.write_csv(out)
        lines = out.getvalue().splitlines()

        self.assertEqual(lines[0], HEADER)
        self.assertEqual(len(lines), 5)

    def test_csv_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "suite.csv"
            with open(path, "w", newline="", encoding="utf-8") as out:
                self.result.write_csv(out)

            self.assertEqual(read_suite_csv(path), self.result.rows)


class FullSuiteCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.rows = run_suite().rows

    def test_row_count(self):
        self.assertEqual(len(self.rows), 2 * len(registry()))

    def test_newton_steps_save_products(self):
        by_pair = {(row.problem, row.solver): row for row in self.rows}
        solved = [
            spec.name
            for spec in registry()
            if by_pair[spec.name, "irnewton"].status == "Converged"
            and by_pair[spec.name, "iarc"].status == "Converged"
        ]
        total = {
            solver: sum(by_pair[name, solver].hvp_count for name in solved)
            for solver in ("irnewton", "iarc")
        }

        self.assertLessEqual(total["irnewton"], total["iarc"])
        cheaper = [
            name
            for name in solved
            if by_pair[name, "irnewton"].hvp_count < by_pair[name, "iarc"].hvp_count
        ]
        self.assertGreaterEqual(2 * len(cheaper), len(solved), cheaper)

    def test_bounded_problems_converge(self):
        bounded = {spec.name for spec in registry() if spec.known_f_min is not None}
        failed = [(r.problem, r.solver) for r in suite_failures(self.rows)]

        self.assertEqual([pair for pair in failed if pair[0] in bounded], [])
        self.assertEqual(
            sorted(pair for pair in failed if pair[0] not in bounded),
            [("indefinite_quadratic4", "iarc"), ("indefinite_quadratic4", "irnewton")],
        )

    def test_profiles_reach_one(self):
        for metric in ("iterations", "hvp_count"):
            profile = performance_profile(self.rows, metric)
            for solver in ("irnewton", "iarc"):
                values = fractions(profile, solver)
                with self.subTest(metric=metric, solver=solver):
                    self.assertTrue(all(u <= v for u, v in zip(values, values[1:])))
                    self.assertEqual(values[-1], 1.0)


class SuiteRunnerCase(unittest.TestCase):
    def test_callbacks(self):
        runner = SuiteRunner([get_problem("quadratic5")])
        runner.on_run = Mock()
        runner.on_finish = Mock()

        runner.run()

        self.assertEqual(runner.on_run.call_count, 2)
        progress = sorted(call.args[1] for call in runner.on_run.call_args_list)
        self.assertEqual(progress, [0.5, 1.0])
        runner.on_finish.assert_called_once_with()

    def test_error_callback(self):
        runner = SuiteRunner([get_problem("quadratic5")], SolverConfig(max_iters=1))
        runner.on_error = Mock()

        result = runner.run()

        # Hitting a limit is a result, not an error
        runner.on_error.assert_not_called()
        self.assertEqual(len(result.rows), 2)
        self.assertIn("MaxIters", [row.status for row in result.rows])

    def test_raising_pair_gets_failure_row(self):
        broken = ProblemSpec("broken", 3, np.zeros(3), factory=lambda: rosenbrock(3))
        runner = SuiteRunner([broken, get_problem("quadratic5")])
        runner.on_error = Mock()

        result = runner.run()

        self.assertEqual(len(result.rows), 4)
        failed = [row for row in result.rows if row.problem == "broken"]
        self.assertEqual([row.solver for row in failed], ["iarc", "irnewton"])
        for row in failed:
            self.assertEqual(row.status, "SubproblemFailure")
            self.assertEqual(row.hvp_count, 0)
            self.assertTrue(math.isnan(row.final_f))
        self.assertEqual(runner.on_error.call_count, 2)
        self.assertIsInstance(runner.on_error.call_args.args[0], ConfigError)
        self.assertEqual(suite_failures(result.rows), failed)

    def test_cancel_skips_pending_pairs(self):
        runner = SuiteRunner([get_problem("quadratic5"), get_problem("powell4")])
        runner.on_run = Mock()
        runner.cancel()

        result = runner.run()

        self.assertEqual(result.rows, [])
        runner.on_run.assert_not_called()

    def test_random_starts(self):
        problems = [get_problem("quadratic5")]
        a = run_suite(problems, seed=3)
        b = run_suite(problems, seed=3)

        self.assertEqual([r.final_f for r in a.rows], [r.final_f for r in b.rows])


class ReadSuiteCsvCase(unittest.TestCase):
    def write(self, text: str) -> Path:
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        path = Path(tmp.name) / "suite.csv"
        path.write_text(text, encoding="utf-8")
        return path

    def test_bad_header(self):
        with self.assertRaises(SuiteFormatError):
            read_suite_csv(self.write("problem,solver\nq,irnewton\n"))

    def test_bad_number(self):
        path = self.write(HEADER + "\nq,irnewton,Converged,x,1,1,1,0,0.0,0.0,0.0\n")
        with self.assertRaises(SuiteFormatError) as ctx:
            read_suite_csv(path)
        self.assertEqual(ctx.exception.path, path)

    def test_short_row(self):
        with self.assertRaises(SuiteFormatError):
            read_suite_csv(self.write(HEADER + "\nq,irnewton,Converged\n"))


class PerformanceProfileCase(unittest.TestCase):
    def test_identical_metrics(self):
        rows = [make_row("p", "a", 5), make_row("p", "b", 5)]
        profile = performance_profile(rows, "iterations")

        self.assertEqual(len(profile), 2 * len(PROFILE_ALPHAS))
        self.assertEqual(profile[0], ("a", 0.0, 1.0))
        self.assertTrue(all(fraction == 1.0 for _, _, fraction in profile))

    def test_twice_as_expensive(self):
        rows = [
            make_row("p1", "a", 20),
            make_row("p1", "b", 10),
            make_row("p2", "a", 8),
            make_row("p2", "b", 4),
        ]
        profile = performance_profile(rows, "iterations")

        for solver, alpha, fraction in profile:
            if solver == "b":
                self.assertEqual(fraction, 1.0)
            elif alpha < 1.0:
                self.assertEqual(fraction, 0.0, alpha)
            else:
                self.assertEqual(fraction, 1.0, alpha)

    def test_hvp_metric(self):
        rows = [make_row("p", "a", 5, hvp_count=30), make_row("p", "b", 50, hvp_count=10)]
        profile = performance_profile(rows, "hvp_count")

        self.assertEqual(fractions(profile, "a")[0], 0.0)
        self.assertEqual(fractions(profile, "b")[0], 1.0)

    def test_failed_problems_are_excluded(self):
        rows = [
            make_row("p1", "a", 10),
            make_row("p1", "b", 20),
            make_row("p2", "a", 10, status="MaxIters"),
            make_row("p2", "b", 5),
        ]
        profile = performance_profile(rows, "iterations")

        self.assertEqual(fractions(profile, "a")[0], 1.0)
        self.assertEqual(fractions(profile, "b")[0], 0.0)
        self.assertEqual(fractions(profile, "b")[-1], 1.0)

    def test_nondecreasing(self):
        rows = [
            make_row(f"p{i}", solver, iterations)
            for i, (x, y) in enumerate([(3, 7), (12, 4), (5, 5), (2000, 1)])
            for solver, iterations in (("a", x), ("b", y))
        ]
        profile = performance_profile(rows, "iterations")

        for solver in ("a", "b"):
            values = fractions(profile, solver)
            with self.subTest(solver=solver):
                self.assertTrue(all(u <= v for u, v in zip(values, values[1:])))
                self.assertTrue(all(0.0 <= v <= 1.0 for v in values))
        self.assertEqual(fractions(profile, "a")[-1], 0.75)
        self.assertEqual(fractions(profile, "b")[-1], 1.0)

    def test_nothing_included(self):
        rows = [make_row("p", "a", 5, status="MaxIters"), make_row("p", "b", 5)]

        with self.assertLogs("irnewton.suite", level="WARNING"):
            profile = performance_profile(rows, "iterations")
        self.assertTrue(all(fraction == 0.0 for _, _, fraction in profile))

    def test_unknown_metric(self):
        with self.assertRaises(ValueError):
            performance_profile([], "wall_secs")


class EmitProfileCase(unittest.TestCase):
    def test_output(self):
        rows = [make_row("p", "a", 10), make_row("p", "b", 20)]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "suite.csv"
            with open(path, "w", newline="", encoding="utf-8") as out:
                SuiteResult(rows).write_csv(out)

            out = io.StringIO()
            emit_profile(path, "iterations", out)

        lines = out.getvalue().splitlines()
        self.assertEqual(lines[0], "solver,alpha,fraction")
        self.assertEqual(lines[1], "a,0.0,1")
        self.assertEqual(lines[1 + len(PROFILE_ALPHAS)], "b,0.0,0")
        self.assertEqual(lines[-1], "b,10.0,1")
        self.assertEqual(len(lines), 1 + 2 * len(PROFILE_ALPHAS))


if __name__ == "__main__":
    unittest.main()
