"""Dual of the L2-regularized logistic discriminator.

For features x_i (data) and G_i (generated), the discriminator problem

    min_w  C/2 |w|^2 + 1/(2n) sum log(1 + exp(-w.x_i)) + 1/(2n) sum log(1 + exp(w.G_i))

has the concave dual

    g(lam) = -1/(2C) |sum lam_x x_i - sum lam_z G_i|^2
             + 1/(2n) sum H(2n lam_x) + 1/(2n) sum H(2n lam_z),   0 <= lam <= 1/(2n)

with w* = (sum lam_x x_i - sum lam_z G_i) / C at the optimum.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import sigmoid, softplus
from .optim import BoxReparamProblem, SolverError, solve_box_concave

DEFAULT_C = 1e-4


def binary_entropy(u):
    """-u log u - (1-u) log(1-u), natural log, with 0 log 0 = 0."""
    u = np.asarray(u, dtype=np.float64)
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise ValueError("binary entropy needs arguments in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(u > 0, u * np.log(u), 0.0) - np.where(u < 1, (1 - u) * np.log1p(-u), 0.0)
    return float(h) if h.ndim == 0 else h


def _entropy_grad(u):
    """d/du H(u) = log((1-u)/u); +inf at 0 and -inf at 1."""
    with np.errstate(divide="ignore"):
        return np.log1p(-u) - np.log(u)


@dataclass
class LinearBatch:
    """Features of n data points and n generated points.

    ``gen_backward`` maps an (n, d) adjoint on ``gen_feats`` to the generator
    parameter gradient; it is only needed for generator updates.
    """

    data_feats: np.ndarray
    gen_feats: np.ndarray
    C: float = DEFAULT_C
    gen_backward: Optional[Callable] = None

    def __post_init__(self):
        self.data_feats = np.atleast_2d(np.asarray(self.data_feats, dtype=np.float64))
        self.gen_feats = np.atleast_2d(np.asarray(self.gen_feats, dtype=np.float64))
        if self.data_feats.shape != self.gen_feats.shape:
            raise ValueError(
                f"data and generated features must have equal shapes, got "
                f"{self.data_feats.shape} and {self.gen_feats.shape}"
            )
        if not self.C > 0:
            raise ValueError("C must be positive")

    @property
    def n(self):
        return self.data_feats.shape[0]

    @property
    def stacked(self):
        """(2n, d) matrix A with lam @ A = sum lam_x x_i - sum lam_z G_i."""
        return np.vstack([self.data_feats, -self.gen_feats])


@dataclass
class LinearDualVars:
    lambda_x: np.ndarray
    lambda_z: np.ndarray

    @classmethod
    def uniform(cls, n, value=None):
        v = 1.0 / (4 * n) if value is None else value
        return cls(np.full(n, v), np.full(n, v))

    @classmethod
    def from_stacked(cls, lam):
        n = lam.size // 2
        return cls(lam[:n].copy(), lam[n:].copy())

    @property
    def stacked(self):
        return np.concatenate([self.lambda_x, self.lambda_z])

    def rescaled(self):
        """2n * lam, the quantity that lies in [0, 1]."""
        return 2 * self.lambda_x.size * self.stacked


def primal_objective_linear(w, batch, with_grad=False):
    w = np.asarray(w, dtype=np.float64)
    n = batch.n
    sx = batch.data_feats @ w
    sz = batch.gen_feats @ w
    val = 0.5 * batch.C * (w @ w) + (softplus(-sx).sum() + softplus(sz).sum()) / (2 * n)
    if not with_grad:
        return float(val)
    grad = batch.C * w + (-(sigmoid(-sx) @ batch.data_feats) + sigmoid(sz) @ batch.gen_feats) / (2 * n)
    return float(val), grad


def moment_difference(lam, batch):
    return lam.lambda_x @ batch.data_feats - lam.lambda_z @ batch.gen_feats


def dual_objective_linear(lam, batch):
    """Value and gradient (lam_x part, lam_z part) of the dual.

    On the box boundary the entropy derivative is infinite and the gradient
    carries +-inf there.
    """
    n = batch.n
    lam_all = lam.stacked
    u = 2 * n * lam_all
    A = batch.stacked
    d = lam_all @ A
    val = -(d @ d) / (2 * batch.C) + binary_entropy(np.clip(u, 0, 1)).sum() / (2 * n)
    grad = -(A @ d) / batch.C + _entropy_grad(u)
    return float(val), (grad[:n], grad[n:])


def _dual_problem(batch):
    n = batch.n
    A = batch.stacked
    AAt = A @ A.T

    def objective(lam_all):
        u = 2 * n * lam_all
        d = lam_all @ A
        val = -(d @ d) / (2 * batch.C) + binary_entropy(u).sum() / (2 * n)
        return val, -(A @ d) / batch.C + _entropy_grad(u)

    def hessian(lam_all):
        u = 2 * n * lam_all
        H = -AAt / batch.C
        H[np.diag_indices(2 * n)] -= 2 * n / (u * (1 - u))
        return H

    return BoxReparamProblem(2 * n, objective, 1.0 / (2 * n), hessian)


def solve_dual_linear(batch, tol=1e-8, max_iter=5000, init=None):
    """Maximize the dual; returns ``(lam*, g*, report)``.

    Starts from lam = 1/(4n) unless ``init`` (LinearDualVars) is given.
    """
    problem = _dual_problem(batch)
    start = None if init is None else init.stacked
    lam, report = solve_box_concave(problem, start, tol=tol, max_iter=max_iter)
    if not np.isfinite(report.objective_value):
        raise SolverError("dual solve produced a non-finite objective")
    return LinearDualVars.from_stacked(lam), report.objective_value, report


def recover_weights(lam, batch):
    """w* = (sum lam_x x_i - sum lam_z G_i) / C."""
    return moment_difference(lam, batch) / batch.C


def generator_gradient_from_dual(lam, batch):
    """d g / d theta with the dual variables held fixed.

    Only the moment term depends on theta; its adjoint on generated feature
    row i is lam_z[i] * d / C with d the weighted moment difference.
    """
    if batch.gen_backward is None:
        raise ValueError("batch has no generator tape to differentiate through")
    d = moment_difference(lam, batch)
    adj = (lam.lambda_z[:, None] * d[None, :]) / batch.C
    return batch.gen_backward(adj)


def minimize_primal_linear(batch, tol=1e-10, max_iter=200, w0=None):
    """Damped Newton descent on the primal, stopped at |grad| <= tol.

    Kept independent of the dual path so it can serve as a reference.
    """
    n = batch.n
    X, G = batch.data_feats, batch.gen_feats
    w = np.zeros(X.shape[1]) if w0 is None else np.array(w0, dtype=np.float64)
    val, g = primal_objective_linear(w, batch, with_grad=True)
    for _ in range(max_iter):
        if np.linalg.norm(g) <= tol:
            break
        px = sigmoid(X @ w)
        pz = sigmoid(G @ w)
        H = batch.C * np.eye(w.size) + (
            (X * (px * (1 - px))[:, None]).T @ X + (G * (pz * (1 - pz))[:, None]).T @ G
        ) / (2 * n)
        step = -np.linalg.solve(H, g)
        t = 1.0
        while True:
            nv, ng = primal_objective_linear(w + t * step, batch, with_grad=True)
            if nv <= val + 1e-4 * t * (g @ step) or t < 1e-12:
                break
            t *= 0.5
        if nv > val and np.linalg.norm(ng) >= np.linalg.norm(g):
            break
        w, val, g = w + t * step, nv, ng
    return w, float(val), float(np.linalg.norm(g))


def frozen_lambda_moment_term(batch, C=None):
    """Dual moment term with every lam fixed at 1/(2n).

    Equals -MMD^2 / (8C) where MMD^2 = |mean(x) - mean(G)|^2.
    """
    C = batch.C if C is None else C
    lam = LinearDualVars.uniform(batch.n, 1.0 / (2 * batch.n))
    d = moment_difference(lam, batch)
    return -(d @ d) / (2 * C)


def empirical_mmd2(data_feats, gen_feats):
    diff = np.mean(data_feats, axis=0) - np.mean(gen_feats, axis=0)
    return float(diff @ diff)
