"""Outer loops: the regularized Newton method and the inexact ARC baseline."""

import logging
import time
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from irnewton.core import (
    Bounds,
    CountingProblem,
    DimensionError,
    IRNewtonError,
    IterationRecord,
    Problem,
    RunReport,
    SolverConfig,
    Status,
    StepCandidate,
    acceptance_ratio,
    check_second_order,
    check_step_conditions,
    cubic_model,
    default_kappa4,
)
from irnewton.linalg import FactorizationCounter
from irnewton.subproblem import CgKind, cg_newton_step, cubic_krylov_step

_log = logging.getLogger(__name__)


class SubproblemFailureError(IRNewtonError):
    """Raised if a trial step cannot be used."""

    def __init__(self, reason: str):
        """Create new failure with the reason."""
        super().__init__(f"Subproblem failure: {reason}")

        self.reason = reason


@dataclass
class DriverState:
    """Mutable state of one solve."""

    x: np.ndarray
    fk: float
    g: np.ndarray
    gnorm_inf: float
    bounds: Bounds
    sigma_aux: float
    k: int
    report: RunReport


@dataclass
class Trial:
    """A trial step and the regularization weight it was computed with."""

    candidate: StepCandidate
    sigma: float
    path: str


def terminated(g: np.ndarray, g0_inf: float, cfg: SolverConfig) -> bool:
    """Return True if ||g||_inf <= grad_tol·max(||g0||_inf, 1)."""
    return float(np.linalg.norm(g, np.inf)) <= cfg.grad_tol * max(g0_inf, 1.0)


def _clamp(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


class Solver:
    """
    Shared outer loop: termination, limits, counting and reporting.

    Subclasses provide the initial regularization state, the trial step and
    the acceptance/update rule.
    """

    name = ""

    on_iteration: Callable[[IterationRecord], Any]
    on_finish: Callable[[RunReport], Any]

    def __init__(self, cfg: Optional[SolverConfig] = None):
        """Create new solver with given (or default) configuration."""
        self.cfg = cfg if cfg is not None else SolverConfig()

    def solve(self, problem: Problem, x0: np.ndarray) -> RunReport:
        """Minimize the problem from x0 and return the run report."""
        x = np.array(x0, dtype=float)
        if x.shape != (problem.dim,):
            raise DimensionError(problem.dim, len(x))

        oracle = CountingProblem(problem)
        counter = FactorizationCounter()
        report = RunReport(solver=self.name, problem=problem.name, final_x=x)
        start = time.monotonic()

        try:
            fk = oracle.f(x)
            g = oracle.grad(x)
        except IRNewtonError as e:
            _log.error("Initial evaluation failed: %s", e)
            report.status = Status.SUBPROBLEM_FAILURE
            return self.__finish(report, oracle, counter, start, None)

        state = DriverState(
            x=x,
            fk=fk,
            g=g,
            gnorm_inf=float(np.linalg.norm(g, np.inf)),
            bounds=self._initial_bounds(),
            sigma_aux=self._initial_sigma(),
            k=0,
            report=report,
        )

        try:
            report.status = self.__loop(oracle, counter, state, start)
        except IRNewtonError as e:
            _log.warning("%s stopped at iteration %d: %s", self.name, state.k, e)
            report.status = Status.SUBPROBLEM_FAILURE

        return self.__finish(report, oracle, counter, start, state)

    def __loop(
        self,
        oracle: CountingProblem,
        counter: FactorizationCounter,
        state: DriverState,
        start: float,
    ) -> Status:
        cfg = self.cfg
        report = state.report
        g0_inf = state.gnorm_inf

        while True:
            if terminated(state.g, g0_inf, cfg):
                return Status.CONVERGED
            if state.k >= cfg.max_iters:
                return Status.MAX_ITERS
            if time.monotonic() - start > cfg.time_limit_secs:
                return Status.TIME_LIMIT

            trial = self._trial_step(oracle, counter, state)
            cand = trial.candidate
            s_norm = cand.s_norm
            if s_norm == 0:
                raise SubproblemFailureError(f"zero trial step ({trial.path})")
            if s_norm < cfg.step_norm_floor:
                return Status.STEP_NORM_FLOOR

            conditions = check_step_conditions(
                state.fk, state.g, cand, cand.h_norm_est, cfg
            )
            if not conditions.all:
                _log.warning(
                    "Iteration %d: trial step (%s) fails step conditions %s",
                    state.k,
                    trial.path,
                    conditions,
                )

            second_order = None
            if cand.xi_min is not None:
                second_order = check_second_order(
                    cand.xi_min, s_norm, default_kappa4(cfg, trial.sigma)
                )

            sigma_lo, sigma_hi = state.bounds.sigma_lo, state.bounds.sigma_hi
            f_before, gnorm_before = state.fk, state.gnorm_inf
            accepted, rho, x_trial, f_trial = self._accept_and_update(
                oracle, state, trial
            )

            if accepted:
                state.x = x_trial
                state.fk = f_trial
                state.g = oracle.grad(x_trial)
                state.gnorm_inf = float(np.linalg.norm(state.g, np.inf))
                report.accepted += 1
            if cand.lam == 0:
                report.newton_steps += 1

            state.k += 1
            report.iterations = state.k

            record = IterationRecord(
                k=state.k - 1,
                f=f_before,
                f_trial=f_trial,
                grad_inf_norm=gnorm_before,
                s_norm=s_norm,
                lam=cand.lam,
                rho=rho,
                accepted=accepted,
                sigma_lo=sigma_lo,
                sigma_hi=sigma_hi,
                sigma_used=trial.sigma,
                sigma=state.sigma_aux,
                path=trial.path,
                certified=conditions.all,
                second_order=second_order,
            )
            report.history.append(record)
            _log.debug(
                "%s k=%d f=%.6e |g|=%.3e |s|=%.3e rho=%.3e %s",
                self.name,
                record.k,
                record.f,
                record.grad_inf_norm,
                s_norm,
                rho,
                "accepted" if accepted else "rejected",
            )
            if getattr(self, "on_iteration", False):
                self.on_iteration(record)

            if accepted and state.fk <= cfg.f_lower_limit:
                return Status.UNBOUNDED

    def __finish(
        self,
        report: RunReport,
        oracle: CountingProblem,
        counter: FactorizationCounter,
        start: float,
        state: Optional[DriverState],
    ) -> RunReport:
        if state is not None:
            report.final_x = state.x
            report.final_f = state.fk
            report.final_grad_inf_norm = state.gnorm_inf
        report.hvp_count = oracle.hvp_count
        report.f_evals = oracle.f_count
        report.grad_evals = oracle.grad_count
        report.tridiag_factorizations = counter.count
        report.wall_secs = time.monotonic() - start

        _log.info(
            "%s on %s: %s after %d iterations",
            self.name,
            report.problem,
            report.status.value,
            report.iterations,
        )
        if getattr(self, "on_finish", False):
            self.on_finish(report)
        return report

    def _initial_bounds(self) -> Bounds:
        raise NotImplementedError

    def _initial_sigma(self) -> float:
        return self.cfg.sigma0

    def _trial_step(
        self, oracle: CountingProblem, counter: FactorizationCounter, state: DriverState
    ) -> Trial:
        raise NotImplementedError

    def _accept_and_update(self, oracle: CountingProblem, state: DriverState, trial: Trial):
        """Evaluate the trial point, decide acceptance, update state bounds."""
        raise NotImplementedError


class IRNewtonSolver(Solver):
    """
    Inexact regularized Newton method with the hybrid CG/cubic step.

    With sigma_lo = 0 a CG Newton step (lambda = 0) is attempted first; on
    negative curvature, or when CG runs out of iterations without certifying
    its iterate, sigma_lo is reset to the auxiliary sigma and a cubic Krylov
    step with weight sigma_lo is computed instead. Steps are accepted when
    (f_k - f(x_k + s_k))/||s_k||³ >= eta1.
    """

    name = "irnewton"

    def _initial_bounds(self) -> Bounds:
        return Bounds(0.0, self.cfg.sigmaU0)

    def _trial_step(
        self, oracle: CountingProblem, counter: FactorizationCounter, state: DriverState
    ) -> Trial:
        cfg = self.cfg
        sigma_lo = state.bounds.sigma_lo

        if sigma_lo == 0:
            outcome = cg_newton_step(oracle, state.x, state.fk, state.g, cfg)
            if outcome.kind is CgKind.CERTIFIED:
                return Trial(outcome.candidate, 0.0, "cg")

            sigma_lo = min(state.sigma_aux, state.bounds.sigma_hi)
            state.bounds = Bounds(sigma_lo, state.bounds.sigma_hi)
            _log.debug(
                "Iteration %d: CG %s after %d iterations, sigma_lo=%.3e",
                state.k,
                outcome.kind.value,
                outcome.cg_iterations,
                sigma_lo,
            )

        cand = cubic_krylov_step(oracle, state.x, state.fk, state.g, sigma_lo, cfg, counter)
        return Trial(cand, sigma_lo, "cubic")

    def _accept_and_update(self, oracle: CountingProblem, state: DriverState, trial: Trial):
        cfg = self.cfg
        cand = trial.candidate
        s_norm = cand.s_norm

        x_trial = state.x + cand.s
        f_trial = oracle.f(x_trial)
        rho = acceptance_ratio(state.fk, f_trial, s_norm)
        accepted = rho >= cfg.eta1

        if trial.sigma > 0:
            if accepted:
                state.sigma_aux = max(cfg.sigma_min, cfg.gamma0 * state.sigma_aux)
            else:
                state.sigma_aux = min(cfg.gammaL * state.sigma_aux, cfg.sigma_max)

        sigma_hi = state.bounds.sigma_hi
        if accepted:
            state.bounds = Bounds(0.0, sigma_hi)
        elif cand.lam < cfg.sigma_min * s_norm:
            sigma_lo = _clamp(state.sigma_aux, cfg.sigma_min, cfg.sigma_max)
            state.bounds = Bounds(sigma_lo, max(sigma_lo, min(sigma_hi, cfg.sigma_max)))
        else:
            ratio = cand.lam / s_norm
            state.bounds = Bounds(cfg.gammaL * ratio, cfg.gammaU * ratio)

        return accepted, rho, x_trial, f_trial


class IARCSolver(Solver):
    """
    Inexact adaptive cubic regularization.

    Every step minimizes the cubic model with the current sigma over growing
    Krylov spaces; the step is accepted when the actual-to-model decrease
    ratio is at least eta1, and sigma shrinks, stays or grows depending on
    that ratio.
    """

    name = "iarc"

    def _initial_bounds(self) -> Bounds:
        return Bounds(self.cfg.sigma0, self.cfg.sigma0)

    def _trial_step(
        self, oracle: CountingProblem, counter: FactorizationCounter, state: DriverState
    ) -> Trial:
        sigma = state.sigma_aux
        cand = cubic_krylov_step(
            oracle, state.x, state.fk, state.g, sigma, self.cfg, counter
        )
        return Trial(cand, sigma, "cubic")

    def _accept_and_update(self, oracle: CountingProblem, state: DriverState, trial: Trial):
        cfg = self.cfg
        cand = trial.candidate
        sigma = trial.sigma

        model_decrease = state.fk - cubic_model(state.fk, state.g, cand.s, cand.hs, sigma)
        if model_decrease <= 0:
            raise SubproblemFailureError(
                f"cubic model does not decrease ({model_decrease:.3e})"
            )

        x_trial = state.x + cand.s
        f_trial = oracle.f(x_trial)
        ratio = (state.fk - f_trial) / model_decrease
        accepted = ratio >= cfg.eta1

        if ratio >= cfg.eta2:
            sigma = max(cfg.sigma_min, cfg.gamma0 * sigma)
        elif ratio < cfg.eta1:
            sigma = min(cfg.gammaL * sigma, cfg.sigma_max)
        state.sigma_aux = sigma
        state.bounds = Bounds(sigma, sigma)

        return accepted, ratio, x_trial, f_trial


SOLVERS = {
    IRNewtonSolver.name: IRNewtonSolver,
    IARCSolver.name: IARCSolver,
}


def irnewton_solve(
    problem: Problem, x0: np.ndarray, cfg: Optional[SolverConfig] = None
) -> RunReport:
    """Run the regularized Newton method."""
    return IRNewtonSolver(cfg).solve(problem, x0)


def iarc_solve(
    problem: Problem, x0: np.ndarray, cfg: Optional[SolverConfig] = None
) -> RunReport:
    """Run the inexact ARC baseline."""
    return IARCSolver(cfg).solve(problem, x0)
