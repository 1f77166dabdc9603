"""
Krylov and tridiagonal kernels.

Lanczos tridiagonalization with full reorthogonalization, extreme eigenvalues
of symmetric tridiagonal matrices (LAPACK bisection on Sturm counts), shifted
tridiagonal solves, and the scalar root-finder for the reduced cubic.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional

import numpy as np
from scipy.linalg import (
    LinAlgError,
    cho_solve_banded,
    cholesky_banded,
    eigh_tridiagonal,
)

from irnewton.core import ConfigError, IRNewtonError

_log = logging.getLogger(__name__)

BREAKDOWN_RTOL = 1e-12
SECULAR_RTOL = 1e-12
SECULAR_MAX_ITERS = 200


class NotPositiveDefiniteError(IRNewtonError):
    """Raised if T + shift·I is not positive definite."""

    def __init__(self, shift: float):
        """Create new error for the rejected shift."""
        super().__init__(f"Shifted tridiagonal is not positive definite (shift {shift})")

        self.shift = shift


class KrylovLimitError(IRNewtonError):
    """Raised if a Krylov space is expanded past the problem dimension."""

    def __init__(self, dim: int):
        """Create new error with the problem dimension."""
        super().__init__(f"Krylov space already spans all {dim} dimensions")

        self.dim = dim


class ZeroGradientError(IRNewtonError):
    """Raised if a Krylov space is started from a zero vector."""

    def __init__(self):
        """Create new zero gradient error."""
        super().__init__("Cannot start a Krylov space from a zero gradient")


@dataclass
class FactorizationCounter:
    """Counts tridiagonal factorizations."""

    count: int = 0

    def add(self):
        self.count += 1


@dataclass(frozen=True)
class Tridiag:
    """Symmetric tridiagonal matrix stored by its diagonal and off-diagonal."""

    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "diag", np.array(self.diag, dtype=float))
        object.__setattr__(self, "offdiag", np.array(self.offdiag, dtype=float))
        if len(self.diag) < 1 or len(self.offdiag) != len(self.diag) - 1:
            raise ConfigError(
                "offdiag", f"need {len(self.diag) - 1} entries, got {len(self.offdiag)}"
            )

    @property
    def m(self) -> int:
        return len(self.diag)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[:-1] += self.offdiag * v[1:]
        out[1:] += self.offdiag * v[:-1]
        return out

    def inf_norm(self) -> float:
        row = np.abs(self.diag).copy()
        row[:-1] += np.abs(self.offdiag)
        row[1:] += np.abs(self.offdiag)
        return float(np.max(row))


def _select_eig(T: Tridiag, index: int) -> float:
    if T.m == 1:
        return float(T.diag[0])
    eig = eigh_tridiagonal(
        T.diag,
        T.offdiag,
        eigvals_only=True,
        select="i",
        select_range=(index, index),
        lapack_driver="stebz",
    )
    return float(eig[0])


def tridiag_smallest_eig(T: Tridiag) -> float:
    """Return the smallest eigenvalue by bisection on Sturm sequence counts."""
    return _select_eig(T, 0)


def tridiag_largest_eig(T: Tridiag) -> float:
    """Return the largest eigenvalue by bisection on Sturm sequence counts."""
    return _select_eig(T, T.m - 1)


def tridiag_norm_estimate(T: Tridiag) -> float:
    """Return the spectral norm of T, max(|xi_min|, |xi_max|)."""
    return max(abs(tridiag_smallest_eig(T)), abs(tridiag_largest_eig(T)))


class ShiftedTridiagFactor:
    """Factorization of T + shift·I, reusable for several right-hand sides."""

    def __init__(
        self, T: Tridiag, shift: float, counter: Optional[FactorizationCounter] = None
    ):
        """Factor T + shift·I; raise NotPositiveDefiniteError on a bad pivot."""
        self.shift = shift

        if T.m == 1:
            banded = (T.diag + shift).reshape(1, 1)
        else:
            banded = np.zeros((2, T.m))
            banded[0] = T.diag + shift
            banded[1, :-1] = T.offdiag

        if counter is not None:
            counter.add()

        try:
            self.__factor = cholesky_banded(banded, lower=True)
        except LinAlgError as e:
            raise NotPositiveDefiniteError(shift) from e

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve_banded((self.__factor, True), np.asarray(rhs, dtype=float))


def solve_shifted_tridiag(
    T: Tridiag,
    lam: float,
    rhs: np.ndarray,
    counter: Optional[FactorizationCounter] = None,
) -> np.ndarray:
    """Return (T + lam·I)^-1 rhs; T is left untouched."""
    return ShiftedTridiagFactor(T, lam, counter).solve(rhs)


class KrylovWorkspace:
    """
    Lanczos basis of span{g, Hg, H²g, ...} built one vector at a time.

    The first basis vector is g/||g||, so the reduced gradient is gamma·e1.
    After every step the next Lanczos residual vector is kept as `pending`
    with norm `pending_beta`; it gives the unreduced residual of any lifted
    subspace solution without further Hessian products.
    """

    def __init__(self, g: np.ndarray, hvp: Callable[[np.ndarray], np.ndarray]):
        """Start a workspace from gradient g, consuming one product."""
        gamma = float(np.linalg.norm(g))
        if gamma == 0:
            raise ZeroGradientError()

        self.n = len(g)
        self.gamma = gamma
        self.basis: List[np.ndarray] = [np.asarray(g, dtype=float) / gamma]
        self.alpha: List[float] = []
        self.beta: List[float] = []
        self.breakdown = False
        self.pending = np.zeros(self.n)
        self.pending_beta = 0.0

        self.__hvp = hvp
        self.__absorb(self.basis[0])

    @property
    def m(self) -> int:
        return len(self.basis)

    def __absorb(self, q: np.ndarray):
        """Multiply the newest basis vector and form the next residual."""
        hq = np.asarray(self.__hvp(q), dtype=float)
        a = float(q @ hq)
        self.alpha.append(a)

        w = hq - a * q
        if self.m > 1:
            w -= self.beta[-1] * self.basis[-2]

        # Two passes of classical Gram-Schmidt
        R = np.array(self.basis)
        for _ in range(2):
            w -= R.T @ (R @ w)

        self.pending = w
        self.pending_beta = float(np.linalg.norm(w))

    def breakdown_tol(self) -> float:
        scale = max(np.max(np.abs(self.alpha)), max(self.beta, default=0.0))
        return BREAKDOWN_RTOL * scale

    @property
    def invariant(self) -> bool:
        """True if the current space is invariant under H (or full)."""
        return self.m >= self.n or self.pending_beta <= self.breakdown_tol()

    def expand(self) -> "KrylovWorkspace":
        """Add one basis vector, consuming one product, or flag breakdown."""
        if self.breakdown:
            raise KrylovLimitError(self.m)
        if self.m >= self.n:
            raise KrylovLimitError(self.n)

        if self.pending_beta <= self.breakdown_tol():
            self.breakdown = True
            _log.debug("Lanczos breakdown at m=%d", self.m)
            return self

        self.beta.append(self.pending_beta)
        q = self.pending / self.pending_beta
        self.basis.append(q)
        self.__absorb(q)
        return self

    def tridiag(self) -> Tridiag:
        return Tridiag(np.array(self.alpha), np.array(self.beta))

    def basis_matrix(self) -> np.ndarray:
        """Return R with the basis vectors as columns (n x m)."""
        return np.column_stack(self.basis)

    def lift(self, v: np.ndarray) -> np.ndarray:
        return self.basis_matrix() @ v


def lanczos_init(g: np.ndarray, hvp: Callable[[np.ndarray], np.ndarray]) -> KrylovWorkspace:
    """Return a one-dimensional workspace started from g."""
    return KrylovWorkspace(g, hvp)


def lanczos_expand(ws: KrylovWorkspace) -> KrylovWorkspace:
    """Grow the workspace by one dimension (see KrylovWorkspace.expand)."""
    return ws.expand()


class SecularSolution(NamedTuple):
    """Minimizer of the reduced cubic and its regularization values."""

    lam: float
    v: np.ndarray
    shift: float
    hard_case: bool = False


def _hard_case(
    T: Tridiag,
    gamma: float,
    sigma: float,
    shift: float,
    counter: Optional[FactorizationCounter],
) -> SecularSolution:
    """Solve at the leftmost eigenvalue, completing v along its eigenvector."""
    if counter is not None:
        counter.add()
    eigvals, eigvecs = eigh_tridiagonal(T.diag, T.offdiag)

    tol = 1e-10 * max(1.0, T.inf_norm())
    coef = -gamma * eigvecs[0]
    v = np.zeros(T.m)
    for i, value in enumerate(eigvals):
        if value + shift > tol:
            v += coef[i] / (value + shift) * eigvecs[:, i]

    target = shift / (1.5 * sigma)
    gap = target**2 - float(v @ v)
    if gap > 0:
        v = v + math.sqrt(gap) * eigvecs[:, 0]

    _log.info("Reduced cubic hard case at shift %.3e (m=%d)", shift, T.m)
    return SecularSolution(sigma * float(np.linalg.norm(v)), v, shift, True)


def secular_root(
    T: Tridiag,
    gamma: float,
    sigma: float,
    counter: Optional[FactorizationCounter] = None,
    shift0: Optional[float] = None,
) -> SecularSolution:
    """
    Minimize gamma·v1 + v'Tv/2 + sigma·||v||³/2 over v.

    The minimizer is v(mu) = -(T + mu·I)^-1 gamma·e1 with mu = 1.5·sigma·||v(mu)||
    and T + mu·I positive semidefinite. The root in mu is found by safeguarded
    Newton iteration on psi(mu) = 1/||v(mu)|| - 1.5·sigma/mu inside a bisection
    bracket. The returned lam is sigma·||v||, the regularization carried by the
    step.
    """
    if sigma <= 0:
        raise ConfigError("sigma", "must be positive")
    if gamma <= 0:
        raise ConfigError("gamma", "must be positive")

    rhs = np.zeros(T.m)
    rhs[0] = -gamma

    xi = tridiag_smallest_eig(T)
    lo = max(0.0, -xi)
    # ||v(mu)|| <= gamma/(mu + xi) bounds the root from above
    hi = 0.5 * (-xi + math.sqrt(xi * xi + 6.0 * sigma * gamma))
    hi = max(hi, lo) * (1.0 + 1e-8) + 1e-300

    if xi < 0:
        trial_shift = lo + 1e-10 * max(1.0, lo)
        try:
            v = ShiftedTridiagFactor(T, trial_shift, counter).solve(rhs)
        except NotPositiveDefiniteError:
            pass
        else:
            if trial_shift >= 1.5 * sigma * float(np.linalg.norm(v)):
                return _hard_case(T, gamma, sigma, lo, counter)

    a, b = lo, hi
    mu = shift0 if shift0 is not None and lo < shift0 < hi else hi
    v = None
    for _ in range(SECULAR_MAX_ITERS):
        try:
            factor = ShiftedTridiagFactor(T, mu, counter)
        except NotPositiveDefiniteError:
            a = mu
            mu = 0.5 * (a + b)
            continue

        v = factor.solve(rhs)
        v_norm = float(np.linalg.norm(v))
        gap = mu - 1.5 * sigma * v_norm
        if abs(gap) <= SECULAR_RTOL * max(1.0, mu):
            break

        if gap < 0:
            a = mu
        else:
            b = mu
        if b - a <= 4 * np.finfo(float).eps * max(1.0, b):
            break

        w = factor.solve(v)
        psi = 1.0 / v_norm - 1.5 * sigma / mu
        dpsi = float(v @ w) / v_norm**3 + 1.5 * sigma / mu**2
        step = mu - psi / dpsi
        mu = step if a < step < b else 0.5 * (a + b)
    else:
        _log.warning("Secular iteration did not converge (m=%d)", T.m)

    if v is None:
        return _hard_case(T, gamma, sigma, lo, counter)

    return SecularSolution(sigma * float(np.linalg.norm(v)), v, mu)
