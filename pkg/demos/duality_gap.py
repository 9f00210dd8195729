"""Walk through both duality results on small random instances.

The linear discriminator's inner minimization is replaced by a box-constrained
concave maximization; we solve both sides independently and compare. Then the
same is done for one trust-region step of a nonlinear discriminator.
"""
import numpy as np

from dualgan.cli import random_score_lin_data
from dualgan.dual_linear import LinearBatch, minimize_primal_linear, recover_weights, solve_dual_linear
from dualgan.oracles import linear_kkt_residual, minimize_score_lin_on_ball
from dualgan.trust_region import solve_tr_dual

rng = np.random.default_rng(0)

print("linear discriminator: primal minimum vs dual maximum")
for C in (1e-4, 1e-2, 1.0):
    batch = LinearBatch(rng.normal(size=(10, 5)), rng.normal(0.5, 1.0, size=(10, 5)), C)
    w_primal, primal, _ = minimize_primal_linear(batch, tol=1e-10)
    lam, g, _ = solve_dual_linear(batch)
    w_dual = recover_weights(lam, batch)
    print(f"  C={C:<6g} primal {primal:.10f}  dual {g:.10f}  "
          f"|w diff| {np.abs(w_dual - w_primal).max():.1e}  kkt {linear_kkt_residual(lam, w_dual, batch):.1e}")

# with C=1 the weights stay small, so every 2n*lam sits near the balanced value 1/2
lam_all = np.concatenate([lam.lambda_x, lam.lambda_z])
print("  rescaled duals 2n*lam at C=1:", np.round(2 * 10 * lam_all, 3))

print("\nscore-linearized trust-region step: dual vs projected gradient on the ball")
data = random_score_lin_data(rng, n=6)
for delta in (1e-3, 1.0, 1e3):
    lam, s, m, rep = solve_tr_dual(data, delta)
    _, m_ref, iters = minimize_score_lin_on_ball(data, delta)
    print(f"  delta={delta:<6g} model min {m_ref:.10f}  dual {rep.objective_value:.10f}  "
          f"lam_T {lam.lambda_T:.3e}  0.5|s|^2 {0.5 * s @ s:.3e}  ({iters} PGD iterations)")
