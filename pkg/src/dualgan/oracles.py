"""Primal-side reference solvers used to cross-check the dual solvers.

Nothing here touches dual variables, so agreement with the dual route is an
independent confirmation rather than a restatement.
"""
from __future__ import annotations

import numpy as np

from .autodiff import sigmoid
from .dual_linear import minimize_primal_linear
from .trust_region import model_score_lin, model_score_lin_grad


def project_ball(s, delta):
    """Euclidean projection onto {s : 0.5 |s|^2 <= delta}."""
    r = np.sqrt(2.0 * delta)
    norm = np.linalg.norm(s)
    return s if norm <= r else s * (r / norm)


def minimize_score_lin_on_ball(data, delta, tol=1e-10, max_iter=50000):
    """Accelerated projected gradient (FISTA with restarts) on the score-lin model.

    The step is 1/L with L = C + |B|_2^2 / (8n), a global bound on the
    model's curvature since sigmoid' <= 1/4. Stops once the gradient mapping
    L |s - P(s - grad/L)| falls below ``tol``. Returns ``(s, m(s), iterations)``.
    """
    n = data.n
    B = np.vstack([data.gradF_x, data.gradF_z])
    L = data.C + np.linalg.norm(B, 2) ** 2 / (8 * n)
    s = np.zeros(data.w_k.size)
    y, t = s.copy(), 1.0
    f_prev = model_score_lin(s, data)
    restarted = False
    it = 0
    for it in range(1, max_iter + 1):
        s_new = project_ball(y - model_score_lin_grad(y, data) / L, delta)
        f_new = model_score_lin(s_new, data)
        if f_new > f_prev:
            if restarted:
                # a plain projected step from s no longer descends: round-off floor
                break
            y, t, restarted = s.copy(), 1.0, True
            continue
        restarted = False
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = s_new + ((t - 1) / t_new) * (s_new - s)
        s, t, f_prev = s_new, t_new, f_new
        mapping = L * np.linalg.norm(s - project_ball(s - model_score_lin_grad(s, data) / L, delta))
        if mapping <= tol:
            break
    return s, float(f_prev), it


def linear_primal_reference(batch, tol=1e-10):
    """Primal minimizer of the regularized logistic discriminator."""
    return minimize_primal_linear(batch, tol=tol)


def linear_kkt_residual(lam, w, batch):
    """max |2n lam - sigmoid(margin)|: at a saddle point each rescaled dual
    variable equals the logistic-loss slope of its example."""
    n = batch.n
    rx = 2 * n * lam.lambda_x - sigmoid(-(batch.data_feats @ w))
    rz = 2 * n * lam.lambda_z - sigmoid(batch.gen_feats @ w)
    return float(max(np.abs(rx).max(), np.abs(rz).max()))
