"""Trial step computation: truncated CG Newton steps and cubic Krylov steps."""

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from irnewton.core import (
    CountingProblem,
    SolverConfig,
    StepCandidate,
    check_second_order,
    check_step_conditions,
    default_kappa4,
)
from irnewton.linalg import (
    FactorizationCounter,
    lanczos_init,
    secular_root,
    tridiag_norm_estimate,
    tridiag_smallest_eig,
)

_log = logging.getLogger(__name__)


class CgKind(str, Enum):
    """How a CG attempt ended."""

    CERTIFIED = "Certified"
    NEGATIVE_CURVATURE = "NegativeCurvature"
    LIMIT_WITHOUT_CERTIFICATE = "LimitWithoutCertificate"


@dataclass
class CgOutcome:
    """Result of running CG on H s = -g."""

    kind: CgKind
    cg_iterations: int
    candidate: Optional[StepCandidate] = None


def cg_newton_step(
    problem: CountingProblem,
    x: np.ndarray,
    fk: float,
    g: np.ndarray,
    cfg: SolverConfig,
) -> CgOutcome:
    """
    Run CG from s = 0 on H s = -g, stopping at the first certified iterate.

    H·s is kept as the running combination of the products H·p already
    computed, so checking the step conditions costs no oracle call. CG stops
    the moment a direction with p'Hp <= 0 is met. After n updates without a
    certificate the last iterate is returned as LimitWithoutCertificate.
    """
    n = len(g)
    # Residual test with a margin against drift of the recurrence for H·s
    check_cfg = dataclasses.replace(cfg, kappa3=cfg.kappa3 * cfg.cg_residual_safety)

    s = np.zeros(n)
    hs = np.zeros(n)
    r = np.array(g, dtype=float)
    p = -r
    rr = float(r @ r)
    h_norm_est = 0.0
    cand = None

    for j in range(n):
        hp = problem.hvp(x, p)
        curvature = float(p @ hp)
        if curvature <= 0:
            _log.debug("CG negative curvature after %d iterations", j)
            return CgOutcome(CgKind.NEGATIVE_CURVATURE, j)

        h_norm_est = max(h_norm_est, curvature / float(p @ p))
        alpha = rr / curvature
        s = s + alpha * p
        hs = hs + alpha * hp
        r = r + alpha * hp

        cand = StepCandidate.build(g, s, hs, 0.0, h_norm_est=h_norm_est)
        if check_step_conditions(fk, g, cand, h_norm_est, check_cfg).all:
            return CgOutcome(CgKind.CERTIFIED, j + 1, cand)

        rr_next = float(r @ r)
        if rr_next == 0:
            return CgOutcome(CgKind.LIMIT_WITHOUT_CERTIFICATE, j + 1, cand)
        p = -r + (rr_next / rr) * p
        rr = rr_next

    return CgOutcome(CgKind.LIMIT_WITHOUT_CERTIFICATE, n, cand)


def cubic_krylov_step(
    problem: CountingProblem,
    x: np.ndarray,
    fk: float,
    g: np.ndarray,
    sigma: float,
    cfg: SolverConfig,
    counter: Optional[FactorizationCounter] = None,
) -> StepCandidate:
    """
    Minimize the cubic model with weight sigma over growing Krylov spaces.

    Each space is searched exactly through its Lanczos tridiagonal. Expansion
    stops once the stationarity residual ||g + (H + 1.5·sigma·||s||·I)s|| of the
    cubic model is at most kappa3·||s||² (and, when `check_second_order` is
    set, the reduced curvature test also passes), or when the space is
    invariant or full. The returned candidate has lam = sigma·||s||; one
    further product fills in H·s.
    """
    ws = lanczos_init(g, lambda v: problem.hvp(x, v))
    kappa4 = default_kappa4(cfg, sigma)
    shift = None

    while True:
        T = ws.tridiag()
        solution = secular_root(T, ws.gamma, sigma, counter, shift0=shift)
        shift = solution.shift
        v = solution.v
        v_norm = float(np.linalg.norm(v))

        reduced = T.matvec(v) + solution.shift * v
        reduced[0] += ws.gamma
        residual_norm = math.hypot(
            float(np.linalg.norm(reduced)), ws.pending_beta * float(v[-1])
        )

        done = residual_norm <= cfg.kappa3 * v_norm**2
        if done and cfg.check_second_order:
            done = check_second_order(tridiag_smallest_eig(T), v_norm, kappa4)
        if done or ws.invariant:
            break
        ws.expand()

    s = ws.lift(v)
    hs = problem.hvp(x, s)
    _log.debug("Cubic step: m=%d, sigma=%.3e, |s|=%.3e", ws.m, sigma, v_norm)

    return StepCandidate.build(
        g,
        s,
        hs,
        sigma * float(np.linalg.norm(s)),
        subspace_dim=ws.m,
        xi_min=tridiag_smallest_eig(T),
        h_norm_est=tridiag_norm_estimate(T),
    )
