"""
Built-in test problems with analytic gradients and Hessian-vector products.

Also provides finite-difference checks of the derivative oracles.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from irnewton.core import ConfigError, IRNewtonError, Problem

# Seed for the random evaluation points x0 + U[-1,1]^n
RANDOM_SEED = 20170419


class UnknownProblemError(IRNewtonError):
    """Raised if no registered problem has the requested name."""

    def __init__(self, name: str):
        """Create new lookup error for given name."""
        super().__init__(f"Unknown problem ({name})")

        self.name = name


@dataclass(frozen=True)
class ProblemSpec:
    """A registered problem: name, dimension, standard start and factory."""

    name: str
    dim: int
    x0: np.ndarray
    factory: Callable[[], Problem]
    known_f_min: Optional[float] = None
    convex_quadratic: bool = False

    def build(self) -> Problem:
        return self.factory()

    def start(self, seed: Optional[int] = None) -> np.ndarray:
        """Return x0, or a random point near it if a seed is given."""
        if seed is None:
            return np.array(self.x0, dtype=float)
        return random_points(self, 1, seed)[0]


def rosenbrock(n: int) -> Problem:
    """Extended Rosenbrock: a sum of n/2 decoupled two-variable valleys."""
    if n < 2 or n % 2:
        raise ConfigError("n", "rosenbrock needs an even dimension")

    def f(x):
        a, b = x[0::2], x[1::2]
        return float(np.sum(100.0 * (b - a**2) ** 2 + (1.0 - a) ** 2))

    def grad(x):
        a, b = x[0::2], x[1::2]
        t = b - a**2
        g = np.empty(n)
        g[0::2] = -400.0 * a * t - 2.0 * (1.0 - a)
        g[1::2] = 200.0 * t
        return g

    def hvp(x, v):
        a, b = x[0::2], x[1::2]
        va, vb = v[0::2], v[1::2]
        haa = 1200.0 * a**2 - 400.0 * b + 2.0
        hab = -400.0 * a
        out = np.empty(n)
        out[0::2] = haa * va + hab * vb
        out[1::2] = hab * va + 200.0 * vb
        return out

    return Problem(n, f, grad, hvp, name=f"rosenbrock{n}")


def quadratic(spectrum: Sequence[float], b: Sequence[float], name: str = "") -> Problem:
    """Diagonal quadratic f(x) = x'Ax/2 - b'x with A = diag(spectrum)."""
    diag = np.array(spectrum, dtype=float)
    rhs = np.array(b, dtype=float)
    n = len(diag)
    if len(rhs) != n:
        raise ConfigError("b", f"needs {n} entries")

    def f(x):
        return float(0.5 * x @ (diag * x) - rhs @ x)

    def grad(x):
        return diag * x - rhs

    def hvp(x, v):
        return diag * v

    return Problem(n, f, grad, hvp, name=name or f"quadratic{n}")


def powell_singular(n: int = 4) -> Problem:
    """Powell's singular function (blocks of four); singular Hessian at x*=0."""
    if n < 4 or n % 4:
        raise ConfigError("n", "powell singular needs a multiple of four")

    def parts(x):
        a, b, c, d = x[0::4], x[1::4], x[2::4], x[3::4]
        return a, b, c, d, a + 10.0 * b, c - d, b - 2.0 * c, a - d

    def f(x):
        _, _, _, _, u, w, y, z = parts(x)
        return float(np.sum(u**2 + 5.0 * w**2 + y**4 + 10.0 * z**4))

    def grad(x):
        _, _, _, _, u, w, y, z = parts(x)
        g = np.empty(n)
        g[0::4] = 2.0 * u + 40.0 * z**3
        g[1::4] = 20.0 * u + 4.0 * y**3
        g[2::4] = 10.0 * w - 8.0 * y**3
        g[3::4] = -10.0 * w - 40.0 * z**3
        return g

    def hvp(x, v):
        _, _, _, _, _, _, y, z = parts(x)
        va, vb, vc, vd = v[0::4], v[1::4], v[2::4], v[3::4]
        du = 2.0 * (va + 10.0 * vb)
        dw = 10.0 * (vc - vd)
        dy = 12.0 * y**2 * (vb - 2.0 * vc)
        dz = 120.0 * z**2 * (va - vd)
        out = np.empty(n)
        out[0::4] = du + dz
        out[1::4] = 10.0 * du + dy
        out[2::4] = dw - 2.0 * dy
        out[3::4] = -dw - dz
        return out

    return Problem(n, f, grad, hvp, name=f"powell{n}")


def cosine(n: int) -> Problem:
    """Chained cosine sum f(x) = sum cos(x_i² - x_{i+1}/2); nonconvex, f >= 1-n."""
    if n < 2:
        raise ConfigError("n", "cosine needs at least two variables")

    def inner(x):
        return x[:-1] ** 2 - 0.5 * x[1:]

    def f(x):
        return float(np.sum(np.cos(inner(x))))

    def grad(x):
        sn = np.sin(inner(x))
        g = np.zeros(n)
        g[:-1] -= 2.0 * x[:-1] * sn
        g[1:] += 0.5 * sn
        return g

    def hvp(x, v):
        u = inner(x)
        sn, cs = np.sin(u), np.cos(u)
        du = 2.0 * x[:-1] * v[:-1] - 0.5 * v[1:]
        coef = -cs * du
        out = np.zeros(n)
        out[:-1] += 2.0 * x[:-1] * coef - 2.0 * sn * v[:-1]
        out[1:] -= 0.5 * coef
        return out

    return Problem(n, f, grad, hvp, name=f"cosine{n}")


def _spec(name, x0, factory, **kwargs) -> ProblemSpec:
    x0 = np.array(x0, dtype=float)
    return ProblemSpec(name, len(x0), x0, factory, **kwargs)


def registry() -> List[ProblemSpec]:
    """Return the built-in suite in a fixed order."""
    spectrum5 = np.arange(1.0, 6.0)
    # Two clusters: condition number 1e4, CG exact after two steps
    spectrum20 = np.repeat([1.0, 1e4], 10)
    spectrum4 = np.array([-2.0, -1.0, 1.0, 2.0])

    return [
        _spec(
            "rosenbrock2",
            [-1.2, 1.0],
            lambda: rosenbrock(2),
            known_f_min=0.0,
        ),
        _spec(
            "rosenbrock10",
            np.tile([-1.2, 1.0], 5),
            lambda: rosenbrock(10),
            known_f_min=0.0,
        ),
        _spec(
            "quadratic5",
            np.zeros(5),
            lambda: quadratic(spectrum5, np.full(5, 0.01), "quadratic5"),
            known_f_min=-0.5 * np.sum(1e-4 / spectrum5),
            convex_quadratic=True,
        ),
        _spec(
            "illcond_quadratic20",
            np.zeros(20),
            lambda: quadratic(spectrum20, np.full(20, 0.01), "illcond_quadratic20"),
            known_f_min=-0.5 * np.sum(1e-4 / spectrum20),
            convex_quadratic=True,
        ),
        _spec(
            "indefinite_quadratic4",
            np.zeros(4),
            lambda: quadratic(spectrum4, np.full(4, 0.01), "indefinite_quadratic4"),
        ),
        _spec(
            "powell4",
            [3.0, -1.0, 0.0, 1.0],
            lambda: powell_singular(4),
            known_f_min=0.0,
        ),
        _spec(
            "cosine10",
            np.ones(10),
            lambda: cosine(10),
            known_f_min=-9.0,
        ),
    ]


def problem_names() -> List[str]:
    return [spec.name for spec in registry()]


def get_problem(name: str) -> ProblemSpec:
    """Look up a registered problem by name."""
    specs: Dict[str, ProblemSpec] = {spec.name: spec for spec in registry()}
    if name not in specs:
        raise UnknownProblemError(name)
    return specs[name]


def random_points(spec: ProblemSpec, count: int, seed: int = RANDOM_SEED) -> np.ndarray:
    """Return `count` points drawn from x0 + U[-1,1]^n."""
    rng = np.random.default_rng(seed)
    return spec.x0 + rng.uniform(-1.0, 1.0, size=(count, spec.dim))


def fd_check_gradient(problem: Problem, x: np.ndarray, h: float = 1e-6) -> float:
    """
    Compare the gradient with central differences of f.

    Returns the largest coordinate error relative to max(1, |g_i|).
    """
    if h <= 0:
        raise ConfigError("h", "must be positive")

    x = np.asarray(x, dtype=float)
    g = problem.eval_grad(x)
    error = 0.0
    for i in range(problem.dim):
        e = np.zeros(problem.dim)
        e[i] = h
        fd = (problem.eval_f(x + e) - problem.eval_f(x - e)) / (2.0 * h)
        error = max(error, abs(fd - g[i]) / max(1.0, abs(g[i])))
    return error


def fd_check_hvp(problem: Problem, x: np.ndarray, v: np.ndarray, h: float = 1e-6) -> float:
    """Compare hvp(x, v) with central differences of the gradient along unit v."""
    if h <= 0:
        raise ConfigError("h", "must be positive")
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ConfigError("v", "must be a unit vector")

    x = np.asarray(x, dtype=float)
    hv = problem.eval_hvp(x, v)
    fd = (problem.eval_grad(x + h * v) - problem.eval_grad(x - h * v)) / (2.0 * h)
    return float(np.linalg.norm(hv - fd) / max(1.0, np.linalg.norm(hv)))
