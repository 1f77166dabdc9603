"""Domain types, model evaluations and the step condition checker."""

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, List, Mapping, Optional, Union, get_args, get_origin

import numpy as np

_log = logging.getLogger(__name__)

SQRT6 = math.sqrt(6.0)
CAUCHY_FACTOR = 1.0 / (6.0 * math.sqrt(2.0))


class IRNewtonError(Exception):
    """Base class for all errors raised by the library."""


class ConfigError(IRNewtonError):
    """Raised if solver configuration is invalid."""

    def __init__(self, field_name: str, reason: str):
        """Create new configuration error for given field."""
        super().__init__(f"Invalid configuration ({field_name}): {reason}")

        self.field_name = field_name
        self.reason = reason


class DimensionError(IRNewtonError):
    """Raised if vector lengths do not agree."""

    def __init__(self, expected: int, got: int):
        """Create new dimension error with expected and actual lengths."""
        super().__init__(f"Dimension mismatch (expected {expected}, got {got})")

        self.expected = expected
        self.got = got


class OracleError(IRNewtonError):
    """Raised if an objective oracle fails or returns non-finite values."""

    def __init__(self, oracle: str, reason: str):
        """Create new oracle error with the oracle name and the reason."""
        super().__init__(f"Oracle {oracle} failed: {reason}")

        self.oracle = oracle
        self.reason = reason


class DegenerateStepError(IRNewtonError):
    """Raised if a quantity is requested for a zero-norm step."""

    def __init__(self):
        """Create new degenerate step error."""
        super().__init__("Step has zero norm")


@dataclass(frozen=True)
class Problem:
    """Matrix-free objective: f, its gradient and Hessian-vector products."""

    dim: int
    eval_f: Callable[[np.ndarray], float]
    eval_grad: Callable[[np.ndarray], np.ndarray]
    eval_hvp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dim", "must be a positive integer")


class CountingProblem:
    """
    Wraps a problem, counting oracle calls and rejecting non-finite values.

    Every oracle failure is re-raised as OracleError so that solvers can turn
    it into a status instead of a crash.
    """

    def __init__(self, problem: Problem):
        """Create new counting wrapper."""
        self.problem = problem
        self.dim = problem.dim
        self.f_count = 0
        self.grad_count = 0
        self.hvp_count = 0

    def f(self, x: np.ndarray) -> float:
        """Evaluate the objective."""
        self.f_count += 1
        try:
            value = float(self.problem.eval_f(x))
        except Exception as e:  # pylint: disable=broad-except
            raise OracleError("f", repr(e)) from e
        if not math.isfinite(value):
            raise OracleError("f", f"non-finite value {value}")
        return value

    def grad(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the gradient."""
        self.grad_count += 1
        return self.__vector("grad", lambda: self.problem.eval_grad(x))

    def hvp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Evaluate a Hessian-vector product."""
        self.hvp_count += 1
        return self.__vector("hvp", lambda: self.problem.eval_hvp(x, v))

    def __vector(self, oracle: str, call: Callable[[], Any]) -> np.ndarray:
        try:
            value = np.asarray(call(), dtype=float)
        except Exception as e:  # pylint: disable=broad-except
            raise OracleError(oracle, repr(e)) from e
        if value.shape != (self.dim,):
            raise OracleError(oracle, f"returned shape {value.shape}")
        if not np.all(np.isfinite(value)):
            raise OracleError(oracle, "non-finite entries")
        return value


def _has_type(value: Any, annotation: Any) -> bool:
    if get_origin(annotation) is Union:
        return any(_has_type(value, arg) for arg in get_args(annotation))
    if annotation is type(None):
        return value is None
    # bool is a subclass of int; JSON true is never a number here
    if isinstance(value, bool):
        return annotation is bool
    if annotation is float:
        return isinstance(value, (int, float))
    return isinstance(value, annotation)


def _type_name(annotation: Any) -> str:
    if get_origin(annotation) is Union:
        return " or ".join(_type_name(arg) for arg in get_args(annotation))
    if annotation is type(None):
        return "null"
    return annotation.__name__


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters shared by both solvers.

    Defaults are the values that worked well for both implementations on the
    standard unconstrained test set. `eta` is the acceptance threshold of the
    regularized Newton loop; it is the same parameter as `eta1` and defaults
    to it.
    """

    eta: Optional[float] = None
    eta1: float = 1e-16
    eta2: float = 1e-1
    gamma0: float = 2e-1
    gammaL: float = 1e1
    gammaU: float = 2e2
    sigma_min: float = 1e-10
    sigma_max: float = 1e20
    kappa1: float = 1.0
    kappa2: float = 1.0
    kappa3: float = 1.0
    kappa4: Optional[float] = None
    grad_tol: float = 1e-6
    max_iters: int = 1_000_000
    time_limit_secs: float = 14400.0
    step_norm_floor: float = 1e-20
    sigma0: float = 1.0
    sigmaU0: Optional[float] = None
    check_second_order: bool = False
    cg_residual_safety: float = 0.9
    f_lower_limit: float = -1e20

    def __post_init__(self):
        if self.eta is None:
            object.__setattr__(self, "eta", self.eta1)
        if self.sigmaU0 is None:
            object.__setattr__(self, "sigmaU0", self.sigma_max)
        self.__validate()

    def __validate(self):
        def require(ok: bool, name: str, reason: str):
            if not ok:
                raise ConfigError(name, reason)

        require(0 < self.eta1 <= self.eta2 < 1, "eta1", "need 0 < eta1 <= eta2 < 1")
        require(self.eta == self.eta1, "eta", "must equal eta1")
        require(0 < self.gamma0 < 1, "gamma0", "must lie in (0,1)")
        require(1 < self.gammaL <= self.gammaU, "gammaL", "need 1 < gammaL <= gammaU")
        require(
            0 < self.sigma_min <= self.sigma_max,
            "sigma_min",
            "need 0 < sigma_min <= sigma_max",
        )
        for name in ("kappa1", "kappa2", "kappa3"):
            require(getattr(self, name) > 0, name, "must be positive")
        require(
            self.kappa4 is None or self.kappa4 > 0, "kappa4", "must be positive"
        )
        require(self.grad_tol > 0, "grad_tol", "must be positive")
        require(
            isinstance(self.max_iters, int) and self.max_iters > 0,
            "max_iters",
            "must be a positive integer",
        )
        require(self.time_limit_secs > 0, "time_limit_secs", "must be positive")
        require(self.step_norm_floor > 0, "step_norm_floor", "must be positive")
        require(self.sigma0 > 0, "sigma0", "must be positive")
        require(
            self.sigma_min <= self.sigmaU0 <= self.sigma_max,
            "sigmaU0",
            "must lie in [sigma_min, sigma_max]",
        )
        require(
            isinstance(self.check_second_order, bool),
            "check_second_order",
            "must be a boolean",
        )
        require(
            0 < self.cg_residual_safety < 1,
            "cg_residual_safety",
            "must lie in (0,1)",
        )

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "SolverConfig":
        """Create config overriding defaults; unknown keys are an error."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, value in values.items():
            if key not in types:
                raise ConfigError(key, "unknown configuration key")
            if not _has_type(value, types[key]):
                raise ConfigError(
                    key, f"expected {_type_name(types[key])}, got {type(value).__name__}"
                )
        return cls(**values)

    @classmethod
    def from_json(cls, path: Path) -> "SolverConfig":
        """Load config overrides from a JSON object stored in a file."""
        try:
            with open(path, encoding="utf-8") as file:
                values = json.load(file)
        except json.JSONDecodeError as e:
            raise ConfigError(str(path), f"malformed JSON ({e})") from e
        except UnicodeDecodeError as e:
            raise ConfigError(str(path), f"not UTF-8 text ({e.reason})") from e

        if not isinstance(values, dict):
            raise ConfigError(str(path), "top level must be a JSON object")
        return cls.from_dict(values)

    def to_dict(self) -> dict:
        """Return all fields as a plain dictionary."""
        return dataclasses.asdict(self)


@dataclass
class StepCandidate:
    """Trial pair (s, lambda) with the model quantities the checks need."""

    s: np.ndarray
    lam: float
    hs: np.ndarray
    model_decrease: float
    residual: np.ndarray
    subspace_dim: int = 0
    xi_min: Optional[float] = None
    h_norm_est: float = 0.0

    @property
    def s_norm(self) -> float:
        return float(np.linalg.norm(self.s))

    @classmethod
    def build(
        cls,
        g: np.ndarray,
        s: np.ndarray,
        hs: np.ndarray,
        lam: float,
        **kwargs,
    ) -> "StepCandidate":
        """Create candidate computing the cached decrease and residual."""
        _check_dims(g, s, hs)
        decrease = -(float(g @ s) + 0.5 * float(s @ hs))
        residual = g + hs + lam * s
        return cls(
            s=s, lam=lam, hs=hs, model_decrease=decrease, residual=residual, **kwargs
        )


@dataclass(frozen=True)
class Bounds:
    """Lower and upper bounds on lambda/||s||."""

    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        if not 0 <= self.sigma_lo <= self.sigma_hi:
            raise ConfigError("bounds", f"need 0 <= {self.sigma_lo} <= {self.sigma_hi}")


class Status(str, Enum):
    """Termination status of a solve."""

    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    TIME_LIMIT = "TimeLimit"
    STEP_NORM_FLOOR = "StepNormFloor"
    SUBPROBLEM_FAILURE = "SubproblemFailure"
    UNBOUNDED = "Unbounded"


@dataclass
class IterationRecord:
    """Per-iteration trace entry."""

    k: int
    f: float
    f_trial: float
    grad_inf_norm: float
    s_norm: float
    lam: float
    rho: float
    accepted: bool
    sigma_lo: float
    sigma_hi: float
    sigma_used: float
    sigma: float
    path: str
    certified: bool
    second_order: Optional[bool] = None


@dataclass
class RunReport:
    """Outcome of a solve: status, counters, final point and history."""

    solver: str
    problem: str
    status: Status = Status.MAX_ITERS
    iterations: int = 0
    accepted: int = 0
    newton_steps: int = 0
    hvp_count: int = 0
    tridiag_factorizations: int = 0
    f_evals: int = 0
    grad_evals: int = 0
    final_x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_f: float = math.nan
    final_grad_inf_norm: float = math.nan
    wall_secs: float = 0.0
    history: List[IterationRecord] = field(default_factory=list)

    def scalars(self) -> dict:
        """Return all scalar fields (no vectors, no history)."""
        return {
            "solver": self.solver,
            "problem": self.problem,
            "status": self.status.value,
            "iterations": self.iterations,
            "accepted": self.accepted,
            "newton_steps": self.newton_steps,
            "hvp_count": self.hvp_count,
            "tridiag_factorizations": self.tridiag_factorizations,
            "f_evals": self.f_evals,
            "grad_evals": self.grad_evals,
            "final_f": self.final_f,
            "final_grad_inf_norm": self.final_grad_inf_norm,
            "wall_secs": self.wall_secs,
        }


@dataclass(frozen=True)
class StepConditions:
    """Outcome of testing the three step conditions."""

    c_a: bool
    c_b: bool
    c_c: bool
    degenerate: bool = False

    @property
    def all(self) -> bool:
        return self.c_a and self.c_b and self.c_c


def _check_dims(*vectors: np.ndarray) -> int:
    n = len(vectors[0])
    for v in vectors[1:]:
        if len(v) != n:
            raise DimensionError(n, len(v))
    return n


def quadratic_model(fk: float, g: np.ndarray, s: np.ndarray, hs: np.ndarray) -> float:
    """Return q(s) = f + g's + s'Hs/2, with H·s supplied by the caller."""
    _check_dims(g, s, hs)
    return fk + float(g @ s) + 0.5 * float(s @ hs)


def cubic_model(
    fk: float, g: np.ndarray, s: np.ndarray, hs: np.ndarray, sigma: float
) -> float:
    """Return c(s; sigma) = q(s) + sigma·||s||³/2."""
    if sigma < 0:
        raise ConfigError("sigma", "must be nonnegative")
    return quadratic_model(fk, g, s, hs) + 0.5 * sigma * float(np.linalg.norm(s)) ** 3


def acceptance_ratio(fk: float, f_trial: float, s_norm: float) -> float:
    """Return the actual decrease divided by ||s||³."""
    if s_norm <= 0:
        raise DegenerateStepError()
    return (fk - f_trial) / s_norm**3


def delta_k(g_norm: float, s_norm: float, lam: float) -> float:
    """Return the step-size measure used by the Cauchy decrease condition."""
    if s_norm <= 0:
        raise DegenerateStepError()
    if lam == 0:
        return s_norm
    return math.sqrt(g_norm * s_norm / lam) / SQRT6


def check_step_conditions(
    fk: float,
    g: np.ndarray,
    cand: StepCandidate,
    h_norm_est: float,
    cfg: SolverConfig,
) -> StepConditions:
    """
    Test the Cauchy decrease, subspace optimality and residual conditions.

    Only cached candidate fields are used, no oracle is called. The norm
    estimate sits in a denominator, so an underestimate makes the Cauchy test
    stricter.
    """
    s, hs, lam = cand.s, cand.hs, cand.lam
    _check_dims(g, s, hs)

    s_norm = float(np.linalg.norm(s))
    if s_norm == 0:
        return StepConditions(False, False, False, degenerate=True)

    g_norm = float(np.linalg.norm(g))
    decrease = fk - quadratic_model(fk, g, s, hs)
    required = CAUCHY_FACTOR * g_norm * min(
        g_norm / (1.0 + h_norm_est), delta_k(g_norm, s_norm, lam)
    )
    c_a = decrease >= required

    residual = g + hs + lam * s
    s_res = float(s @ residual)
    curvature = float(s @ hs) + lam * s_norm**2
    c_b = s_res <= min(
        cfg.kappa1 * s_norm**2, 0.5 * curvature + 0.5 * cfg.kappa2 * s_norm**3
    )

    c_c = float(np.linalg.norm(residual)) <= lam * s_norm + cfg.kappa3 * s_norm**2

    return StepConditions(c_a, c_b, c_c)


def default_kappa4(cfg: SolverConfig, sigma_lo: float) -> float:
    """Return configured kappa4 or 1.5·sigma_lo (1.5 when sigma_lo is zero)."""
    if cfg.kappa4 is not None:
        return cfg.kappa4
    return 1.5 * (sigma_lo if sigma_lo > 0 else 1.0)


def check_second_order(xi_min: float, s_norm: float, kappa4: float) -> bool:
    """Return True if the reduced Hessian's smallest eigenvalue is >= -kappa4·||s||."""
    return xi_min >= -kappa4 * s_norm
