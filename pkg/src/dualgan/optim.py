"""Box-constrained concave maximization, backtracking line search and the
1-D multiplier root search used by the dual solvers.

Box constraints 0 < lam < hi are removed with lam = hi * sigmoid(nu); the
entropy terms of the duals keep every optimum strictly inside the box, so the
reparametrized problem is smooth and unconstrained.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .autodiff import sigmoid

log = logging.getLogger(__name__)

SHRINK = 0.5
MAX_HALVINGS = 50
MAX_NU_STEP = 4.0
STALL_LIMIT = 25
# sigmoid(nu) stays representable away from 0 and 1 inside this range
NU_RANGE = (-700.0, 35.0)


class SolverError(RuntimeError):
    pass


@dataclass
class BoxReparamProblem:
    """Concave objective on the open box (0, box_hi)^dimension.

    ``objective(lam)`` returns ``(value, grad)``. ``hessian(lam)``, when
    given, returns the (negative semidefinite) Hessian in lam coordinates and
    switches the solver to Newton steps.
    """

    dimension: int
    objective: Callable
    box_hi: object
    hessian: Optional[Callable] = None

    def __post_init__(self):
        hi = np.broadcast_to(np.asarray(self.box_hi, dtype=np.float64), (self.dimension,))
        if np.any(hi <= 0):
            raise ValueError("box_hi must be positive")
        self.box_hi = np.array(hi)


@dataclass
class SolveReport:
    iterations: int
    final_grad_norm: float
    converged: bool
    objective_value: float
    message: str = ""


def backtracking_linesearch(f, x, direction, init_step=1.0, f0=None, slope=None,
                            shrink=SHRINK, max_halvings=MAX_HALVINGS, armijo=1e-4,
                            full_output=False):
    """Largest step ``init_step * shrink**k`` with ``f(x + step*d) >= f(x)``.

    With ``slope`` (the directional derivative) the Armijo condition
    ``f(x + t d) >= f(x) + armijo * t * slope`` is required instead. Returns 0
    when the shrink budget runs out.
    """
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if f0 is None:
        f0 = f(x)
    if not np.isfinite(f0):
        raise SolverError("objective is not finite at the starting point")
    if not np.any(d):
        return (0.0, f0) if full_output else 0.0
    t = float(init_step)
    for _ in range(max_halvings + 1):
        ft = f(x + t * d)
        target = f0 if slope is None else f0 + armijo * t * slope
        if np.isnan(ft):
            raise SolverError(f"objective is NaN at trial step {t:g}")
        if ft >= target:
            return (t, ft) if full_output else t
        t *= shrink
    return (0.0, f0) if full_output else 0.0


def solve_box_concave(problem, init=None, tol=1e-8, max_iter=5000, monitor=None):
    """Maximize ``problem.objective`` over the open box.

    Works in nu = logit(lam / hi). With a Hessian each step solves
    ``M d = grad_nu`` where ``M = -J H J`` plus the positive part of the
    curvature contributed by the sigmoid (J = dlam/dnu), with every
    coordinate's move capped at MAX_NU_STEP; otherwise it takes
    gradient steps with an adaptive initial length. ``monitor``, if given, is
    called with the objective value after every accepted iteration.
    """
    hi = problem.box_hi
    dim = problem.dimension
    if init is None:
        init = 0.5 * hi
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (dim,):
        raise ValueError(f"init has shape {init.shape}, expected ({dim},)")
    if np.any(init <= 0) or np.any(init >= hi):
        raise ValueError("init must lie strictly inside the box")
    if tol <= 0:
        raise ValueError("tol must be positive")

    nu = np.clip(np.log(init / hi) - np.log1p(-init / hi), *NU_RANGE)

    def lam_of(v):
        return hi * sigmoid(np.clip(v, *NU_RANGE))

    def value_grad(v):
        val, g = problem.objective(lam_of(v))
        if not np.isfinite(val) or not np.all(np.isfinite(g)):
            raise SolverError("objective or gradient is not finite inside the box")
        return val, np.asarray(g, dtype=np.float64)

    def value_only(v):
        val = problem.objective(lam_of(v))[0]
        return val if np.isfinite(val) else -np.inf

    step = 1.0
    stalled = 0
    val, g_lam = value_grad(nu)
    it = 0
    gnorm = np.inf
    message = "max_iter reached"
    for it in range(1, max_iter + 1):
        u = sigmoid(nu)
        jac = hi * u * (1.0 - u)
        g_nu = g_lam * jac
        gnorm = float(np.linalg.norm(g_nu))
        if gnorm <= tol:
            message = "converged"
            it -= 1
            break
        if problem.hessian is not None:
            # Newton system M d = g_nu with M = J(-H)J + D, solved for e = J d so
            # coordinates with a vanishing sigmoid slope stay well scaled
            H = np.asarray(problem.hessian(lam_of(nu)))
            K = -H
            with np.errstate(divide="ignore", over="ignore"):
                extra = np.maximum(-g_lam * (1.0 - 2.0 * u), 0.0) / jac
            K[np.diag_indices(dim)] += np.where(np.isfinite(extra), extra, 1e300)
            try:
                e = np.linalg.solve(K, g_lam)
                with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                    d = e / jac
                if not np.all(np.isfinite(d)):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                d = g_nu
            if g_nu @ d <= 0:
                d = g_nu
            big = np.abs(d).max()
            if big > MAX_NU_STEP:
                # a saturated sigmoid would freeze the coordinate for good
                d = d * (MAX_NU_STEP / big)
            t, new_val = backtracking_linesearch(value_only, nu, d, 1.0, f0=val,
                                                 slope=float(g_nu @ d), full_output=True)
            if t == 0.0:
                # round-off regime: take the full step if it still shrinks the gradient
                trial = nu + d
                tv, tg = value_grad(trial)
                u_t = sigmoid(trial)
                if (np.linalg.norm(tg * hi * u_t * (1 - u_t)) < gnorm
                        and tv >= val - 1e-13 * (1.0 + abs(val))):
                    t, new_val = 1.0, tv
                else:
                    message = "line search stalled"
                    break
        else:
            d = g_nu
            t, new_val = backtracking_linesearch(value_only, nu, d, step, f0=val,
                                                 slope=float(g_nu @ d), full_output=True)
            if t == 0.0:
                message = "line search stalled"
                break
            step = min(2.0 * t, 1e12)
        nu = np.clip(nu + t * d, *NU_RANGE)
        prev = val
        val, g_lam = value_grad(nu)
        if monitor is not None:
            monitor(val)
        stalled = stalled + 1 if val - prev <= 1e-15 * (1.0 + abs(val)) else 0
        if stalled >= STALL_LIMIT:
            message = "stalled at round-off level"
            u = sigmoid(nu)
            gnorm = float(np.linalg.norm(g_lam * hi * u * (1.0 - u)))
            break
    else:
        u = sigmoid(nu)
        gnorm = float(np.linalg.norm(g_lam * hi * u * (1.0 - u)))
        it = max_iter
        if gnorm <= tol:
            message = "converged"

    lam = lam_of(nu)
    # keep strictly interior even when sigmoid saturates
    lam = np.clip(lam, np.nextafter(0.0, 1.0), np.nextafter(hi, 0.0))
    report = SolveReport(it, gnorm, gnorm <= tol, float(val), message)
    if not report.converged:
        log.debug("box solve not converged: %s (grad %.3g)", message, gnorm)
    return lam, report


def solve_lambda_T(derivative, upper=1.0, tol=1e-10, max_expand=80):
    """Maximizer over lam_T >= 0 of a concave 1-D function given its derivative.

    Returns 0 when the derivative at 0+ is non-positive (inactive constraint);
    otherwise brackets the root by doubling ``upper`` and runs Brent's method.
    """
    d0 = derivative(0.0)
    if not np.isfinite(d0):
        raise SolverError("derivative is not finite at 0")
    if d0 <= 0.0:
        return 0.0
    lo, hi = 0.0, float(upper)
    d_hi = derivative(hi)
    for _ in range(max_expand):
        if d_hi <= 0.0:
            break
        lo, hi = hi, 2.0 * hi
        d_hi = derivative(hi)
    else:
        raise SolverError(f"derivative still positive at lam_T = {hi:g}; dual looks unbounded")
    if d_hi == 0.0:
        return hi
    return float(brentq(derivative, lo, hi, xtol=tol * 1e-2, rtol=4 * np.finfo(float).eps, maxiter=500))
