"""One test per acceptance criterion, each run at its stated tolerance.

Every test prints a single ``criterion N: PASS/FAIL`` line; the lines are
repeated in the terminal summary.
"""
import os
import time

import numpy as np
import pytest

from dualgan.autodiff import MLPSpec, finite_diff_check, forward_mlp, grad_params, init_params
from dualgan.cli import DatasetConfig, random_score_lin_data
from dualgan.data import FeatureMap, five_gaussians
from dualgan.dual_linear import (
    LinearBatch,
    LinearDualVars,
    dual_objective_linear,
    generator_gradient_from_dual,
    minimize_primal_linear,
    recover_weights,
    solve_dual_linear,
)
from dualgan.metrics import mode_coverage
from dualgan.oracles import minimize_score_lin_on_ball
from dualgan.training import Generator, LinearScorer, MLPScorer, TrainConfig, gan_objective, train
from dualgan.trust_region import (
    ScoreLinData,
    TRDualVars,
    model_score_lin,
    solve_tr_dual,
    step_cost_lin,
    tr_dual_objective,
)


def claim1_instances():
    rng = np.random.default_rng(2024)
    out = []
    for _ in range(50):
        n = int(rng.choice([5, 10, 20]))
        d = int(rng.choice([2, 5, 10]))
        C = float(rng.choice([1e-4, 1e-2, 1.0]))
        out.append(LinearBatch(rng.normal(size=(n, d)), rng.normal(0.5, 1.0, size=(n, d)), C))
    return out


@pytest.fixture(scope="module")
def claim1_results():
    t0 = time.perf_counter()
    rows = []
    for batch in claim1_instances():
        w_ref, primal, gnorm = minimize_primal_linear(batch, tol=1e-10)
        lam, g, _ = solve_dual_linear(batch)
        rows.append((primal, g, gnorm, np.max(np.abs(recover_weights(lam, batch) - w_ref))))
    return np.array(rows), time.perf_counter() - t0


def test_criterion_01_claim1_strong_duality(claim1_results, acceptance):
    rows, elapsed = claim1_results
    primal, g, gnorm = rows[:, 0], rows[:, 1], rows[:, 2]
    rel = np.abs(primal - g) / (1 + np.abs(primal))
    ok = rel.max() <= 1e-6 and gnorm.max() <= 1e-10 and elapsed < 30
    assert acceptance(1, ok, f"max rel gap {rel.max():.2e} over 50 instances, "
                             f"primal grad-norm <= {gnorm.max():.1e}, {elapsed:.1f}s")


def test_criterion_02_weight_recovery(claim1_results, acceptance):
    rows, _ = claim1_results
    worst = rows[:, 3].max()
    assert acceptance(2, worst <= 1e-4, f"max |w_dual - w_primal|_inf {worst:.2e}")


def test_criterion_03_claim2_strong_duality(acceptance):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    gaps, feas, cs, sizes = [], [], [], []
    for i in range(20):
        delta = [1e-3, 1.0, 1e3][i % 3]
        data = random_score_lin_data(rng, n=int(rng.choice([4, 6, 10])))
        sizes.append(data.w_k.size)
        lam, s, m, rep = solve_tr_dual(data, delta)
        _, m_ref, _ = minimize_score_lin_on_ball(data, delta)
        gaps.append(abs(m_ref - rep.objective_value) / (1 + abs(m_ref)))
        feas.append(0.5 * s @ s - delta)
        cs.append(abs(lam.lambda_T * (0.5 * s @ s - delta)))
    elapsed = time.perf_counter() - t0
    ok = (max(gaps) <= 1e-5 and max(feas) <= 1e-8 and max(cs) <= 1e-6 and max(sizes) <= 60
          and elapsed < 60)
    assert acceptance(3, ok, f"max rel gap {max(gaps):.2e}, max 0.5|s|^2 - delta {max(feas):.2e}, "
                             f"max |lam_T slack| {max(cs):.2e}, P <= {max(sizes)}, {elapsed:.1f}s")


def test_criterion_04_cost_lin_direction(acceptance):
    rng = np.random.default_rng(4)
    gen = Generator(MLPSpec((3, 6, 2), ("tanh",)))
    scorer = MLPScorer(MLPSpec((2, 8, 1), ("tanh",)))
    worst_cos, worst_len = 0.0, 0.0
    for _ in range(50):
        theta, w = gen.init(rng), scorer.init(rng)
        x, z = rng.normal(size=(10, 2)), rng.normal(size=(10, 3))
        _, _, grad_w = gan_objective(gen, scorer, theta, w, x, z, with_grads=True)
        delta = float(np.exp(rng.uniform(-8, 8)))
        s = step_cost_lin(grad_w, delta)
        cos = s @ grad_w / (np.linalg.norm(s) * np.linalg.norm(grad_w))
        worst_cos = max(worst_cos, abs(cos + 1))
        worst_len = max(worst_len, abs(np.linalg.norm(s) - np.sqrt(2 * delta)) / np.sqrt(2 * delta))
    ok = worst_cos <= 1e-12 and worst_len <= 1e-14
    assert acceptance(4, ok, f"max |cos + 1| {worst_cos:.1e}, max rel |s| error {worst_len:.1e}")


def test_criterion_05_score_lin_exact_for_linear_scores(acceptance):
    rng = np.random.default_rng(5)
    fmap = FeatureMap.rbf_from_data(rng.normal(scale=2, size=(50, 2)), 20, rng, 0.2)
    scorer = LinearScorer(fmap)
    x, gz = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
    C = 0.1
    w = rng.normal(size=20)
    F_x, dF_x = scorer.per_sample_grads(w, x)
    F_z, dF_z = scorer.per_sample_grads(w, gz)
    data = ScoreLinData(F_x, F_z, dF_x, dF_z, w, C)
    phi_x, phi_z = fmap(x)[0], fmap(gz)[0]
    worst = 0.0
    for _ in range(100):
        s = rng.normal(scale=5.0, size=20)
        v = w + s
        f = 0.5 * C * v @ v + (np.logaddexp(0, -phi_x @ v).sum() + np.logaddexp(0, phi_z @ v).sum()) / 24
        worst = max(worst, abs(model_score_lin(s, data) - f))
    assert acceptance(5, worst <= 1e-10, f"max |m(s) - f(w_k + s)| {worst:.1e} over 100 draws")


def test_criterion_06_gradient_suite(acceptance):
    rng = np.random.default_rng(6)
    errors = {}

    def worst_of(name, fn, points):
        errors[name] = max(finite_diff_check(fn(i), p) for i, p in enumerate(points))

    # generator parameters, through its tape
    gspec = MLPSpec((8, 20, 20, 2), ("tanh", "tanh"))
    z = rng.normal(size=(6, 8))
    adj = rng.normal(size=(6, 2))

    def gen_fn(_):
        def f(p):
            out, tape = forward_mlp(gspec, p, z)
            return float(np.sum(adj * out)), grad_params(tape, adj)
        return f

    worst_of("generator", gen_fn, [init_params(gspec, rng) for _ in range(20)])

    # discriminator scorer: GAN objective in w
    gen = Generator(MLPSpec((3, 6, 2), ("relu",)))
    scorer = MLPScorer(MLPSpec((2, 10, 1), ("tanh",)))
    cases = [(gen.init(rng), rng.normal(size=(5, 2)), rng.normal(size=(5, 3))) for _ in range(20)]
    worst_of("discriminator",
             lambda i: (lambda v: gan_objective(gen, scorer, cases[i][0], v, cases[i][1], cases[i][2], True)[::2]),
             [scorer.init(rng) for _ in range(20)])

    # linear dual in lambda
    batch = LinearBatch(rng.normal(size=(6, 4)), rng.normal(size=(6, 4)), 0.1)

    def dual_fn(_):
        def f(lam):
            v, (gx, gz) = dual_objective_linear(LinearDualVars.from_stacked(lam), batch)
            return v, np.concatenate([gx, gz])
        return f

    worst_of("linear dual", dual_fn, [rng.uniform(0.1, 0.9, 12) / 12 for _ in range(20)])

    # trust-region dual in (lambda_x, lambda_z, lambda_T)
    data = random_score_lin_data(rng, n=5, hidden=6, C=0.5)

    def tr_fn(_):
        def f(v):
            val, (gx, gz, gT) = tr_dual_objective(TRDualVars(v[:5], v[5:10], v[10]), data, 0.7)
            return val, np.concatenate([gx, gz, [gT]])
        return f

    worst_of("trust-region dual", tr_fn,
             [np.concatenate([rng.uniform(0.1, 0.9, 10) / 10, [rng.uniform(0, 3)]]) for _ in range(20)])

    # generator gradient through RBF and random-net features of the linear dual
    for kind in ("rbf features", "random-net features"):
        fmap = (FeatureMap.rbf_from_data(rng.normal(scale=2, size=(40, 2)), 10, rng, 0.2)
                if kind == "rbf features" else FeatureMap.random_net(2, (8, 8), rng))
        small = Generator(MLPSpec((3, 6, 2), ("tanh",)))
        zz, xx = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
        lams = [LinearDualVars.from_stacked(rng.uniform(0.1, 0.9, 10) / 10) for _ in range(20)]

        def feat_fn(i, fmap=fmap, small=small, zz=zz, xx=xx, lams=lams):
            def f(th):
                out, back = small(th, zz)
                phi, vjp = fmap(out)
                b = LinearBatch(fmap(xx)[0], phi, 0.3, lambda a: back(vjp(a)))
                return dual_objective_linear(lams[i], b)[0], generator_gradient_from_dual(lams[i], b)
            return f

        worst_of(kind, feat_fn, [small.init(rng) for _ in range(20)])

    worst = max(errors.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    assert acceptance(6, worst <= 1e-4, f"max rel FD error: {detail}")


@pytest.fixture(scope="module")
def fullbatch_run():
    data = DatasetConfig(n_points=100).sample(0)
    cfg = TrainConfig(trainer_kind="dual_linear", full_batch=True, line_search=True,
                      iterations=500, seed=0, C=1e-4, features="rbf", rbf_anchors=100)
    t0 = time.perf_counter()
    log = train(cfg, data)
    return log, time.perf_counter() - t0


def test_criterion_07_monotone_fullbatch(fullbatch_run, acceptance):
    log, elapsed = fullbatch_run
    g = log.column("g_dual_or_model")
    violations = int(np.sum(np.diff(g) < -1e-9))
    ok = violations == 0 and len(g) == 500 and elapsed < 300
    assert acceptance(7, ok, f"{violations} violations of g_t+1 >= g_t - 1e-9, "
                             f"g {g[0]:.4f} -> {g[-1]:.4f}, {elapsed:.1f}s")


def test_criterion_08_mode_coverage(acceptance):
    t0 = time.perf_counter()
    covered = []
    for seed in (0, 1, 2):
        data = DatasetConfig().sample(seed)
        log = train(TrainConfig(trainer_kind="dual_linear", iterations=2000, seed=seed), data)
        covered.append(mode_coverage(log.samples["final"], five_gaussians()).n_covered)
    elapsed = time.perf_counter() - t0
    passing = sum(c >= 4 for c in covered)
    ok = passing >= 2 and elapsed < 900
    assert acceptance(8, ok, f"modes covered per seed {covered}, {passing}/3 seeds >= 4, {elapsed:.1f}s")


def test_criterion_09_lambda_fixed_point(fullbatch_run, acceptance):
    log, _ = fullbatch_run
    final = log.lambdas[max(log.lambdas)]
    med = float(np.median(final))
    assert acceptance(9, 0.4 <= med <= 0.6, f"median 2n lambda at iteration 499: {med:.4f}")


def test_criterion_10_minibatch_lower_bound(acceptance):
    rng = np.random.default_rng(10)
    spec = five_gaussians()
    x = DatasetConfig(n_points=200).sample(10)
    gz = rng.normal(scale=1.5, size=(200, 2))
    fmap = FeatureMap.rbf_from_data(x, 100, rng, 0.2)
    C = 1e-4
    full = minimize_primal_linear(LinearBatch(fmap(x)[0], fmap(gz)[0], C))[1]
    mins = []
    for _ in range(50):
        ix, iz = rng.choice(200, 20, replace=False), rng.choice(200, 20, replace=False)
        mins.append(minimize_primal_linear(LinearBatch(fmap(x[ix])[0], fmap(gz[iz])[0], C))[1])
    mins = np.array(mins)
    se = mins.std(ddof=1) / np.sqrt(len(mins))
    ok = mins.mean() <= full + 3 * se
    assert spec.mode_count == 5
    assert acceptance(10, ok, f"mean minibatch minimum {mins.mean():.4f} vs full minimum {full:.4f} "
                              f"+ 3 SE ({3 * se:.4f})")


def test_criterion_11_oscillation(acceptance):
    # Both trainers see the same 100 points as one full batch with the same seed.
    # With small minibatches the dual objective carries sampling noise of its own
    # and a standard GAN near equilibrium sits flat at ln 2, so the comparison is
    # made where the dual trainer can use its line search.
    def masd(v):
        return float(np.mean(np.abs(np.diff(v[-500:]))))

    results = []
    for seed in (0, 1, 2):
        data = DatasetConfig(n_points=100).sample(seed)
        dual = train(TrainConfig(trainer_kind="dual_linear", full_batch=True, line_search=True,
                                 iterations=1000, seed=seed), data)
        std = train(TrainConfig(trainer_kind="standard", batch_size=100, iterations=1000, seed=seed), data)
        results.append((masd(dual.column("g_dual_or_model")), masd(std.column("f_primal"))))
    wins = sum(d < s for d, s in results)
    detail = "; ".join(f"seed {i}: dual {d:.2e} vs standard {s:.2e}" for i, (d, s) in enumerate(results))
    assert acceptance(11, wins >= 2, f"{wins}/3 seeds with smaller dual oscillation ({detail})")


@pytest.mark.slow
@pytest.mark.skipif(os.environ.get("DUALGAN_EXTENDED") != "1",
                    reason="extended sweep (up to 2 h); set DUALGAN_EXTENDED=1")
def test_criterion_12_sweep_direction(acceptance, tmp_path):
    from dualgan.cli import DEFAULT_SWEEP, run_sweep

    sweep = dict(kinds=["dual_linear", "standard"], base={}, workers=os.cpu_count() or 1,
                 dataset=DatasetConfig(), distributions=DEFAULT_SWEEP)
    _, summary = run_sweep(sweep, trials=30, seed=0)
    d, s = summary["dual_linear"]["success_rate"], summary["standard"]["success_rate"]
    assert acceptance(12, d >= s, f"success rate dual {d:.2f} vs standard {s:.2f} over 30 trials")
