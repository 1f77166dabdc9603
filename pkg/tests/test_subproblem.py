import math
import unittest

import numpy as np

from irnewton.core import (
    CountingProblem,
    Problem,
    SolverConfig,
    check_second_order,
    check_step_conditions,
    quadratic_model,
)
from irnewton.linalg import (
    FactorizationCounter,
    lanczos_expand,
    lanczos_init,
    secular_root,
)
from irnewton.subproblem import CgKind, cg_newton_step, cubic_krylov_step
from tests.test_linalg import reduced_cubic_value


def dense_problem(H, g) -> CountingProblem:
    """Counting oracle of f(x) = g'x + x'Hx/2."""
    H = np.atleast_2d(np.array(H, dtype=float))
    g = np.array(g, dtype=float)
    return CountingProblem(
        Problem(
            len(g),
            lambda x: float(g @ x + 0.5 * x @ H @ x),
            lambda x: g + H @ x,
            lambda x, v: H @ v,
            name="dense",
        )
    )


def random_instance(rng: np.random.Generator, n: int):
    A = rng.normal(size=(n, n))
    return 0.5 * (A + A.T), rng.normal(size=n)


class CgNewtonStepCase(unittest.TestCase):
    def setUp(self):
        self.cfg = SolverConfig()

    def run_cg(self, H, g):
        oracle = dense_problem(H, g)
        n = len(g)
        outcome = cg_newton_step(oracle, np.zeros(n), 0.0, np.array(g, float), self.cfg)
        return oracle, outcome

    def test_identity(self):
        oracle, outcome = self.run_cg(np.eye(2), [1.0, 0.0])

        self.assertIs(outcome.kind, CgKind.CERTIFIED)
        self.assertEqual(outcome.cg_iterations, 1)
        self.assertEqual(outcome.candidate.lam, 0.0)
        np.testing.assert_allclose(outcome.candidate.s, [-1.0, 0.0])
        np.testing.assert_allclose(outcome.candidate.residual, [0.0, 0.0], atol=1e-15)
        self.assertEqual(outcome.candidate.subspace_dim, 0)
        self.assertEqual(oracle.hvp_count, 1)

    def test_negative_definite(self):
        oracle, outcome = self.run_cg(-np.eye(2), [1.0, 0.0])

        self.assertIs(outcome.kind, CgKind.NEGATIVE_CURVATURE)
        self.assertEqual(outcome.cg_iterations, 0)
        self.assertIsNone(outcome.candidate)
        self.assertEqual(oracle.hvp_count, 1)

    def test_diagonal(self):
        oracle, outcome = self.run_cg(np.diag([1.0, 3.0]), [1.0, 1.0])

        self.assertIs(outcome.kind, CgKind.CERTIFIED)
        self.assertLessEqual(outcome.cg_iterations, 2)
        np.testing.assert_allclose(outcome.candidate.s, [-1.0, -1.0 / 3.0], atol=1e-12)
        self.assertEqual(oracle.hvp_count, outcome.cg_iterations)

    def test_negative_curvature_after_updates(self):
        H = np.diag([1.0, 2.0, -3.0])
        oracle, outcome = self.run_cg(H, [1.0, 1.0, 1.0])

        self.assertIs(outcome.kind, CgKind.NEGATIVE_CURVATURE)
        self.assertEqual(oracle.hvp_count, outcome.cg_iterations + 1)

    def test_certified_candidate_passes_conditions(self):
        rng = np.random.default_rng(21)
        for trial in range(20):
            n = 6
            A = rng.normal(size=(n, n))
            H = A @ A.T + 0.1 * np.eye(n)
            g = rng.normal(size=n)
            oracle, outcome = self.run_cg(H, g)

            with self.subTest(trial=trial):
                self.assertIsNot(outcome.kind, CgKind.NEGATIVE_CURVATURE)
                cand = outcome.candidate
                np.testing.assert_allclose(cand.hs, H @ cand.s, atol=1e-8)
                if outcome.kind is CgKind.CERTIFIED:
                    conditions = check_step_conditions(
                        0.0, g, cand, cand.h_norm_est, self.cfg
                    )
                    self.assertTrue(conditions.all)
                self.assertLessEqual(cand.h_norm_est, np.linalg.norm(H, 2) + 1e-10)

    def test_condition_checks_need_no_products(self):
        oracle, outcome = self.run_cg(np.diag([1.0, 2.0, 3.0, 4.0]), np.ones(4))
        self.assertEqual(oracle.hvp_count, outcome.cg_iterations)


class CubicKrylovStepCase(unittest.TestCase):
    def setUp(self):
        self.cfg = SolverConfig()

    def test_concave_scalar(self):
        oracle = dense_problem([[-1.0]], [1.0])
        cand = cubic_krylov_step(oracle, np.zeros(1), 0.0, np.ones(1), 1.0, self.cfg)
        t = (1 + math.sqrt(7)) / 3

        np.testing.assert_allclose(cand.s, [-t], rtol=1e-10)
        self.assertAlmostEqual(cand.lam, t, places=10)
        self.assertEqual(cand.subspace_dim, 1)
        self.assertAlmostEqual(cand.xi_min, -1.0, places=12)
        self.assertEqual(oracle.hvp_count, 2)

    def test_identity(self):
        oracle = dense_problem(np.eye(2), [1.0, 0.0])
        counter = FactorizationCounter()
        cand = cubic_krylov_step(
            oracle, np.zeros(2), 0.0, np.array([1.0, 0.0]), 1.0, self.cfg, counter
        )
        t = (math.sqrt(7) - 1) / 3

        np.testing.assert_allclose(cand.s, [-t, 0.0], atol=1e-10)
        self.assertEqual(cand.subspace_dim, 1)
        self.assertGreater(counter.count, 0)
        self.assertTrue(check_step_conditions(0.0, np.array([1.0, 0.0]), cand, 1.0, self.cfg).all)

    def test_lambda_is_sigma_times_step_norm(self):
        rng = np.random.default_rng(4)
        for sigma in (0.1, 1.0, 10.0):
            H, g = random_instance(rng, 10)
            oracle = dense_problem(H, g)
            cand = cubic_krylov_step(oracle, np.zeros(10), 0.0, g, sigma, self.cfg)

            with self.subTest(sigma=sigma):
                self.assertAlmostEqual(
                    cand.lam, sigma * cand.s_norm, delta=1e-10 * max(1.0, cand.lam)
                )
                np.testing.assert_allclose(cand.hs, H @ cand.s, atol=1e-10)
                np.testing.assert_allclose(
                    cand.residual, g + H @ cand.s + cand.lam * cand.s, atol=1e-10
                )

    def test_candidates_pass_conditions(self):
        rng = np.random.default_rng(12)
        for trial in range(30):
            H, g = random_instance(rng, 8)
            sigma = float(rng.choice([0.3, 1.0, 3.0]))
            oracle = dense_problem(H, g)
            cand = cubic_krylov_step(oracle, np.zeros(8), 0.0, g, sigma, self.cfg)
            conditions = check_step_conditions(0.0, g, cand, cand.h_norm_est, self.cfg)

            with self.subTest(trial=trial, sigma=sigma):
                self.assertTrue(conditions.c_a)
                self.assertTrue(conditions.c_b)
                self.assertTrue(conditions.c_c)
                stationarity = g + H @ cand.s + 1.5 * cand.lam * cand.s
                self.assertLessEqual(
                    np.linalg.norm(stationarity),
                    self.cfg.kappa3 * cand.s_norm**2 + 1e-10,
                )

    def test_products_counted(self):
        H = np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
        oracle = dense_problem(H, np.ones(5))
        cand = cubic_krylov_step(oracle, np.zeros(5), 0.0, np.ones(5), 1.0, self.cfg)

        # One product per basis vector plus H·s
        self.assertEqual(oracle.hvp_count, cand.subspace_dim + 1)

    def test_second_order_check_expands(self):
        # The first Krylov vector already meets the residual test but sees
        # curvature -1.91; only the curvature test forces the second vector.
        H = np.diag([-2.0, 1.0, 1.0, 1.0])
        g = np.array([1.0, 0.1, 0.1, 0.1])
        checked_cfg = SolverConfig(check_second_order=True, kappa4=1e-3)

        default = cubic_krylov_step(dense_problem(H, g), np.zeros(4), 0.0, g, 1.0, self.cfg)
        checked = cubic_krylov_step(dense_problem(H, g), np.zeros(4), 0.0, g, 1.0, checked_cfg)

        self.assertEqual(default.subspace_dim, 1)
        self.assertFalse(check_second_order(default.xi_min, default.s_norm, 1e-3))
        self.assertEqual(checked.subspace_dim, 2)
        self.assertAlmostEqual(checked.xi_min, -2.0, places=10)


class NestedSubspaceCase(unittest.TestCase):
    def test_model_value_nonincreasing(self):
        rng = np.random.default_rng(30)
        for trial in range(10):
            H, g = random_instance(rng, 12)
            sigma = 1.0
            ws = lanczos_init(g, lambda v: H @ v)

            values = []
            while True:
                T = ws.tridiag()
                solution = secular_root(T, ws.gamma, sigma)
                values.append(reduced_cubic_value(T, ws.gamma, sigma, solution.v))
                if ws.invariant:
                    break
                lanczos_expand(ws)

            with self.subTest(trial=trial):
                self.assertTrue(
                    all(b <= a + 1e-10 * max(1.0, abs(a)) for a, b in zip(values, values[1:]))
                )

    def test_subspace_stationarity_of_lifted_step(self):
        rng = np.random.default_rng(50)
        for trial in range(50):
            n = int(rng.integers(2, 9))
            H, g = random_instance(rng, n)
            sigma = float(rng.uniform(0.1, 5.0))
            ws = lanczos_init(g, lambda v: H @ v)
            for _ in range(int(rng.integers(0, n))):
                if ws.invariant:
                    break
                lanczos_expand(ws)

            solution = secular_root(ws.tridiag(), ws.gamma, sigma)
            R = ws.basis_matrix()
            s = R @ solution.v
            lam = sigma * np.linalg.norm(s)
            self.assertGreater(lam, 0.0)

            # Stationarity of the cubic model restricted to span(R)
            reduced = R.T @ (g + H @ s + 1.5 * lam * s)
            with self.subTest(trial=trial):
                self.assertLessEqual(
                    np.linalg.norm(reduced),
                    1e-8 * max(1.0, np.linalg.norm(g), np.linalg.norm(H, 2) * np.linalg.norm(s)),
                )

    def test_model_decrease_matches_quadratic_model(self):
        H, g = random_instance(np.random.default_rng(6), 5)
        oracle = dense_problem(H, g)
        cand = cubic_krylov_step(oracle, np.zeros(5), 2.0, g, 1.0, SolverConfig())

        self.assertAlmostEqual(
            cand.model_decrease, 2.0 - quadratic_model(2.0, g, cand.s, cand.hs), places=12
        )


if __name__ == "__main__":
    unittest.main()
