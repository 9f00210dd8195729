"""Trust-region steps for nonlinear discriminators.

Two local models of the regularized discriminator loss around w_k:

* cost linearization, m(s) = f_k + grad_f . s, whose minimizer over the
  ball 0.5 |s|^2 <= delta is a normalized negative-gradient step;
* score linearization, which linearizes only the scores F(w, x) and keeps
  the logistic loss, solved through its concave dual in
  (lam_x, lam_z, lam_T).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .autodiff import sigmoid, softplus
from .dual_linear import _entropy_grad, binary_entropy
from .optim import BoxReparamProblem, SolveReport, solve_box_concave, solve_lambda_T


class DegenerateModel(ArithmeticError):
    """The model predicts (almost) no decrease, so rho is undefined."""


@dataclass
class TrustRegionState:
    w_k: np.ndarray
    delta: float = 0.1
    rho_accept_low: float = 0.25
    rho_accept_high: float = 2.0
    shrink: float = 0.5
    expand: float = 2.0
    max_resolves: int = 10
    adaptive: bool = True
    rejections: int = 0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("trust-region radius must be positive")
        if not 0 < self.rho_accept_low < 1 < self.rho_accept_high:
            raise ValueError("need 0 < rho_accept_low < 1 < rho_accept_high")
        if not 0 < self.shrink < 1 or not self.expand > 1:
            raise ValueError("need 0 < shrink < 1 < expand")


@dataclass
class TRDualVars:
    lambda_x: np.ndarray
    lambda_z: np.ndarray
    lambda_T: float = 0.0

    @property
    def stacked(self):
        return np.concatenate([self.lambda_x, self.lambda_z])


@dataclass
class ScoreLinData:
    """Scores and per-example score gradients at w_k.

    F_x, F_z: (n,) scores on data / generated points; gradF_x, gradF_z:
    (n, P) gradients of those scores with respect to w.
    """

    F_x: np.ndarray
    F_z: np.ndarray
    gradF_x: np.ndarray
    gradF_z: np.ndarray
    w_k: np.ndarray
    C: float

    def __post_init__(self):
        self.w_k = np.asarray(getattr(self.w_k, "values", self.w_k), dtype=np.float64)
        n, P = self.gradF_x.shape
        if self.gradF_z.shape != (n, P) or self.F_x.shape != (n,) or self.F_z.shape != (n,):
            raise ValueError("score arrays have inconsistent shapes")
        if self.w_k.shape != (P,):
            raise ValueError(f"w_k has {self.w_k.size} entries, gradients have {P} columns")
        if not (np.all(np.isfinite(self.gradF_x)) and np.all(np.isfinite(self.gradF_z))):
            raise ValueError("score gradients contain non-finite values")
        if not self.C > 0:
            raise ValueError("C must be positive")

    @property
    def n(self):
        return self.F_x.size

    @property
    def stacked_grads(self):
        """(2n, P) matrix B with lam @ B = sum lam_x dF_x - sum lam_z dF_z."""
        return np.vstack([self.gradF_x, -self.gradF_z])


def step_cost_lin(grad_f, delta):
    """-sqrt(2 delta) grad / |grad|, or zero for a zero gradient."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    g = np.asarray(getattr(grad_f, "values", grad_f), dtype=np.float64)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        return np.zeros_like(g)
    return -(np.sqrt(2.0 * delta) / norm) * g


def model_cost_lin(s, f_k, grad_f):
    g = np.asarray(getattr(grad_f, "values", grad_f))
    return float(f_k + g @ np.asarray(s))


def model_score_lin(s, data):
    s = np.asarray(s, dtype=np.float64)
    n = data.n
    w = data.w_k + s
    return float(
        0.5 * data.C * (w @ w)
        + softplus(-data.F_x - data.gradF_x @ s).sum() / (2 * n)
        + softplus(data.F_z + data.gradF_z @ s).sum() / (2 * n)
    )


def model_score_lin_grad(s, data):
    n = data.n
    gx = -sigmoid(-(data.F_x + data.gradF_x @ s)) @ data.gradF_x
    gz = sigmoid(data.F_z + data.gradF_z @ s) @ data.gradF_z
    return data.C * (data.w_k + s) + (gx + gz) / (2 * n)


def _v(lam_all, data):
    return -data.C * data.w_k + lam_all @ data.stacked_grads


def tr_dual_objective(lam, data, delta):
    """Value and gradients ``(g_x, g_z, g_T)`` of the score-linearized dual."""
    n = data.n
    lam_all = lam.stacked
    lt = float(lam.lambda_T)
    c = data.C + lt
    v = _v(lam_all, data)
    u = 2 * n * lam_all
    val = (
        0.5 * data.C * (data.w_k @ data.w_k)
        - (v @ v) / (2 * c)
        + binary_entropy(np.clip(u, 0, 1)).sum() / (2 * n)
        - lam.lambda_x @ data.F_x
        + lam.lambda_z @ data.F_z
        - lt * delta
    )
    g = -(data.stacked_grads @ v) / c + _entropy_grad(u)
    g[:n] -= data.F_x
    g[n:] += data.F_z
    g_T = (v @ v) / (2 * c * c) - delta
    return float(val), (g[:n], g[n:], float(g_T))


def recover_step(lam, data):
    """s* = (sum lam_x dF_x - sum lam_z dF_z - C w_k) / (C + lam_T)."""
    return _v(lam.stacked, data) / (data.C + lam.lambda_T)


def _inner_problem(data, lam_T, delta):
    n = data.n
    B = data.stacked_grads
    BBt = B @ B.T
    lin = np.concatenate([-data.F_x, data.F_z])
    c = data.C + lam_T
    const = 0.5 * data.C * (data.w_k @ data.w_k) - lam_T * delta

    def objective(lam_all):
        u = 2 * n * lam_all
        v = _v(lam_all, data)
        val = const - (v @ v) / (2 * c) + binary_entropy(u).sum() / (2 * n) + lin @ lam_all
        return val, -(B @ v) / c + _entropy_grad(u) + lin

    def hessian(lam_all):
        u = 2 * n * lam_all
        H = -BBt / c
        H[np.diag_indices(2 * n)] -= 2 * n / (u * (1 - u))
        return H

    return BoxReparamProblem(2 * n, objective, 1.0 / (2 * n), hessian)


def solve_tr_dual(data, delta, tol=1e-10, max_iter=5000):
    """Solve the score-linearized trust-region dual.

    For each trial lam_T the box problem in (lam_x, lam_z) is solved to
    ``tol``; the outer search finds the root of the profile derivative
    0.5 |s*(lam_T)|^2 - delta (envelope theorem). Returns
    ``(lam*, s*, m(s*), report)`` where ``report.objective_value`` is the
    dual value.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    n = data.n
    cache = {}
    warm = [np.full(2 * n, 1.0 / (4 * n))]

    def inner(lam_T):
        key = float(lam_T)
        if key not in cache:
            lam_all, rep = solve_box_concave(_inner_problem(data, key, delta), warm[0],
                                             tol=tol, max_iter=max_iter)
            warm[0] = lam_all
            cache[key] = (lam_all, rep)
        return cache[key]

    def derivative(lam_T):
        lam_all, _ = inner(lam_T)
        v = _v(lam_all, data)
        return (v @ v) / (2 * (data.C + lam_T) ** 2) - delta

    scale = max(1.0, data.C)
    lam_T = solve_lambda_T(derivative, upper=scale, tol=1e-12)
    lam_all, rep = inner(lam_T)
    lam = TRDualVars(lam_all[:n].copy(), lam_all[n:].copy(), lam_T)
    s = recover_step(lam, data)
    value, _ = tr_dual_objective(lam, data, delta)
    report = SolveReport(rep.iterations, rep.final_grad_norm, rep.converged, value,
                         f"{rep.message}; {len(cache)} inner solves")
    return lam, s, model_score_lin(s, data), report


def acceptance_ratio(f_old, f_new, m_s):
    """(f(w_k) - f(w_k + s)) / (f(w_k) - m(s))."""
    predicted = f_old - m_s
    if abs(predicted) <= 1e-14:
        raise DegenerateModel(f"predicted decrease {predicted:.3g} is too small")
    return (f_old - f_new) / predicted


class DeltaUpdate(NamedTuple):
    delta: float
    accept: bool
    forced: bool = False


def update_delta(state, rho, active=False):
    """Accept/reject a step from its acceptance ratio.

    rho in [low, high]: accept, expanding delta only when the step sat on
    the trust-region boundary. Otherwise reject and shrink; once
    ``state.rejections`` exceeds ``max_resolves`` the caller is told to take
    a zero step.
    """
    if not np.isfinite(rho):
        raise ValueError("rho must be finite")
    if state.rho_accept_low <= rho <= state.rho_accept_high:
        if state.adaptive and active:
            return DeltaUpdate(state.delta * state.expand, True)
        return DeltaUpdate(state.delta, True)
    if state.rejections >= state.max_resolves:
        warnings.warn(
            f"trust region rejected {state.rejections} times in a row; taking a zero step",
            RuntimeWarning, stacklevel=2,
        )
        return DeltaUpdate(state.delta, True, True)
    return DeltaUpdate(state.delta * state.shrink, False)
