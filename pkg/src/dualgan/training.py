"""Trainers: standard alternating GAN, dual linear GAN (full batch with line
search, or minibatch with Adam) and trust-region GAN with cost or score
linearization."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import MLPSpec, ParamVector, forward_mlp, init_params, sigmoid, softplus
from .data import FeatureMap, NoiseSpec, sample_noise
from .dual_linear import (
    LinearBatch,
    generator_gradient_from_dual,
    primal_objective_linear,
    recover_weights,
    solve_dual_linear,
)
from .optim import backtracking_linesearch
from .trust_region import (
    DegenerateModel,
    ScoreLinData,
    TrustRegionState,
    acceptance_ratio,
    model_cost_lin,
    solve_tr_dual,
    step_cost_lin,
    update_delta,
)


TRAINER_KINDS = ("standard", "dual_linear", "tr_cost_lin", "tr_score_lin")
LOG_FIELDS = ("iter", "f_primal", "g_dual_or_model", "disc_acc", "lambda_median",
              "lambda_p10", "lambda_p90", "delta", "rho", "wall_ms")


@dataclass
class TrainConfig:
    trainer_kind: str = "dual_linear"
    batch_size: int = 100
    iterations: int = 2000
    seed: int = 0
    # generator
    noise_dim: int = 8
    noise_kind: str = "gaussian"
    gen_hidden: tuple = (20, 20)
    gen_activation: str = "tanh"
    gen_lr: float = 1e-2
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    generator_steps_per_iter: int = 1
    # discriminator: linear on features, or an MLP scorer on raw inputs
    disc_kind: str = "linear"
    features: str = "rbf"
    rbf_anchors: int = 100
    rbf_temperature: float = 0.2
    random_hidden: tuple = (32, 32)
    disc_hidden: tuple = (10,)
    disc_activation: str = "tanh"
    disc_lr: float = 1e-2
    C: float = 1e-4
    # trust region
    delta: float = 0.05
    delta_adaptive: bool = False
    # dual solver
    full_batch: bool = False
    line_search: bool = False
    dual_tol: float = 1e-8
    dual_max_iter: int = 5000
    # logging
    sample_every: int = 0
    n_eval_samples: int = 1000
    check_weak_duality: bool = False
    log_wall_time: bool = False

    def __post_init__(self):
        self.gen_hidden = tuple(int(h) for h in self.gen_hidden)
        self.disc_hidden = tuple(int(h) for h in self.disc_hidden)
        self.random_hidden = tuple(int(h) for h in self.random_hidden)
        self.validate()

    def validate(self):
        if self.trainer_kind not in TRAINER_KINDS:
            raise ValueError(f"trainer_kind: unknown trainer {self.trainer_kind!r}")
        for name in ("batch_size", "noise_dim", "generator_steps_per_iter", "rbf_anchors",
                     "n_eval_samples"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name}: must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations: must be non-negative")
        for name in ("gen_lr", "disc_lr", "C", "delta", "rbf_temperature", "dual_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name}: must be positive")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name}: must lie in [0, 1)")
        if self.line_search and not (self.trainer_kind == "dual_linear" and self.full_batch):
            raise ValueError("line_search: only valid for full-batch dual_linear training")
        if self.disc_kind not in ("linear", "mlp"):
            raise ValueError(f"disc_kind: unknown discriminator {self.disc_kind!r}")
        if self.features not in ("identity", "rbf", "random_net"):
            raise ValueError(f"features: unknown feature map {self.features!r}")
        if self.trainer_kind == "dual_linear" and self.disc_kind != "linear":
            raise ValueError("disc_kind: dual_linear training needs a linear discriminator")
        if self.noise_kind not in ("gaussian", "uniform"):
            raise ValueError(f"noise_kind: unknown prior {self.noise_kind!r}")

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam descent step; pass -grad to ascend.

    Returns ``(new_params, new_state)`` and leaves the inputs untouched.
    """
    p = np.asarray(getattr(params, "values", params), dtype=np.float64)
    g = np.asarray(getattr(grad, "values", grad), dtype=np.float64)
    if g.shape != p.shape or state.first_moment.shape != p.shape:
        raise ValueError("Adam state, params and grad must have matching shapes")
    t = state.step_count + 1
    m = beta1 * state.first_moment + (1 - beta1) * g
    v = beta2 * state.second_moment + (1 - beta2) * g * g
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    new = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    if isinstance(params, ParamVector):
        new = params.with_values(new)
    return new, AdamState(m, v, t)


class Generator:
    def __init__(self, spec):
        self.spec = spec

    @property
    def n_params(self):
        return self.spec.n_params

    def init(self, rng):
        return init_params(self.spec, rng).values

    def __call__(self, theta, z):
        """Returns ``(samples, backward)`` with ``backward(adj) -> dtheta``."""
        p = ParamVector(theta, self.spec.layout())
        out, tape = forward_mlp(self.spec, p, z)
        return out, lambda adj: tape.backward(adj)[0].values


class LinearScorer:
    """F(w, x) = w . phi(x)."""

    def __init__(self, features, d_in=2):
        self.features = features
        self.n_params = features.dim(d_in)

    def init(self, rng):
        return np.zeros(self.n_params)

    def scores(self, w, x):
        phi, vjp = self.features(x)

        def backward(adj):
            return adj @ phi, vjp(adj[:, None] * w[None, :])

        return phi @ w, backward

    def per_sample_grads(self, w, x):
        phi, _ = self.features(x)
        return phi @ w, phi


class MLPScorer:
    def __init__(self, spec):
        if spec.d_out != 1:
            raise ValueError("a scorer must have a scalar output")
        self.spec = spec
        self.n_params = spec.n_params

    def init(self, rng):
        return init_params(self.spec, rng).values

    def scores(self, w, x):
        out, tape = forward_mlp(self.spec, ParamVector(w, self.spec.layout()), x)

        def backward(adj):
            gp, gx = tape.backward(adj[:, None])
            return gp.values, gx

        return out[:, 0], backward

    def per_sample_grads(self, w, x):
        out, tape = forward_mlp(self.spec, ParamVector(w, self.spec.layout()), x)
        rows, _ = tape.backward(np.ones_like(out), per_sample=True)
        return out[:, 0], rows


def gan_objective_from_scores(F_x, F_z):
    """-(1/2n) sum log D(x_i) - (1/2n) sum log(1 - D(G(z_i))) with D = sigmoid(F)."""
    n = F_x.size
    return float((softplus(-F_x).sum() + softplus(F_z).sum()) / (2 * n))


def gan_objective(generator, scorer, theta, w, x, z, with_grads=False):
    """GAN cross-entropy objective f(theta, w); optionally ``(f, df/dtheta, df/dw)``."""
    g_out, g_back = generator(theta, z)
    F_x, back_x = scorer.scores(w, x)
    F_z, back_z = scorer.scores(w, g_out)
    f = gan_objective_from_scores(F_x, F_z)
    if not with_grads:
        return f
    n = F_x.size
    gw_x, _ = back_x(-sigmoid(-F_x) / (2 * n))
    gw_z, gx_z = back_z(sigmoid(F_z) / (2 * n))
    return f, g_back(gx_z), gw_x + gw_z


def discriminator_accuracy(F_x, F_z):
    return float((np.sum(F_x > 0) + np.sum(F_z < 0)) / (F_x.size + F_z.size))


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)
    lambdas: dict = field(default_factory=dict)
    theta: np.ndarray = None
    w: np.ndarray = None

    def column(self, name):
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def append(self, **row):
        rec = {k: np.nan for k in LOG_FIELDS}
        rec.update(row)
        self.records.append(rec)


def _lambda_stats(rescaled):
    p10, med, p90 = np.percentile(rescaled, [10, 50, 90])
    return dict(lambda_median=med, lambda_p10=p10, lambda_p90=p90)


class _Setup:
    """Networks, features and random streams shared by all trainers."""

    def __init__(self, config, data, generator=None):
        self.config = config
        self.data = np.asarray(data, dtype=np.float64)
        root = np.random.default_rng(config.seed)
        init_rng, feat_rng, self.batch_rng, self.noise_rng, self.eval_rng = root.spawn(5)
        self.noise = NoiseSpec(config.noise_kind, config.noise_dim)
        if generator is None:
            spec = MLPSpec((config.noise_dim, *config.gen_hidden, 2),
                           (config.gen_activation,) * len(config.gen_hidden))
            self.generator = Generator(spec)
            self.theta = self.generator.init(init_rng)
        else:
            self.generator, self.theta = generator[0], np.array(generator[1], dtype=np.float64)
        if config.features == "rbf":
            self.features = FeatureMap.rbf_from_data(self.data, config.rbf_anchors, feat_rng,
                                                     config.rbf_temperature)
        elif config.features == "random_net":
            self.features = FeatureMap.random_net(self.data.shape[1], config.random_hidden, feat_rng)
        else:
            self.features = FeatureMap("identity")
        if config.disc_kind == "linear":
            self.scorer = LinearScorer(self.features, self.data.shape[1])
        else:
            spec = MLPSpec((self.data.shape[1], *config.disc_hidden, 1),
                           (config.disc_activation,) * len(config.disc_hidden))
            self.scorer = MLPScorer(spec)
        self.w = self.scorer.init(init_rng)
        self.t0 = time.perf_counter()

    def data_batch(self, n):
        if n >= len(self.data):
            return self.data[self.batch_rng.permutation(len(self.data))]
        return self.data[self.batch_rng.choice(len(self.data), size=n, replace=False)]

    def noise_batch(self, n):
        return sample_noise(self.noise, n, self.noise_rng)

    def linear_batch(self, theta, x, z):
        phi_x, _ = self.features(x)
        g_out, g_back = self.generator(theta, z)
        phi_z, vjp = self.features(g_out)
        return LinearBatch(phi_x, phi_z, self.config.C, lambda adj: g_back(vjp(adj)))

    def wall(self):
        if not self.config.log_wall_time:
            return np.nan
        return 1000.0 * (time.perf_counter() - self.t0)

    def maybe_dump(self, log, it, theta):
        every = self.config.sample_every
        if every and (it % every == 0 or it == self.config.iterations - 1):
            log.samples[it] = self.sample(theta, self.config.n_eval_samples, self.eval_rng)

    def sample(self, theta, n, rng):
        return self.generator(theta, sample_noise(self.noise, n, rng))[0]

    def finish(self, log, theta, w):
        log.theta, log.w = np.array(theta), np.array(w)
        log.samples["final"] = self.sample(theta, self.config.n_eval_samples,
                                           np.random.default_rng([self.config.seed, 1]))
        return log


def _weak_duality_probe(batch, g, rng, count=10):
    d = batch.data_feats.shape[1]
    for _ in range(count):
        w = rng.normal(scale=rng.choice([0.1, 1.0, 10.0]), size=d)
        if g > primal_objective_linear(w, batch) + 1e-10:
            raise AssertionError(f"weak duality violated: g = {g} above primal at a probe w")


def _dual_record(batch, lam, g):
    w_star = recover_weights(lam, batch)
    F_x = batch.data_feats @ w_star
    F_z = batch.gen_feats @ w_star
    return dict(f_primal=gan_objective_from_scores(F_x, F_z), g_dual_or_model=g,
                disc_acc=discriminator_accuracy(F_x, F_z), **_lambda_stats(lam.rescaled()))


def train_dual_linear_fullbatch(config, data, generator=None, noise=None, log=None):
    """Monotone full-batch training on a fixed noise set.

    Each iteration solves the dual, ascends along the generator gradient of
    the solved dual (envelope theorem) and, with ``line_search``, accepts a
    step only if the re-solved dual does not decrease. Without line search
    the generator takes Adam steps instead.
    """
    setup = _Setup(config, data, generator)
    x = setup.data
    z = setup.noise_batch(len(x)) if noise is None else np.asarray(noise, dtype=np.float64)
    if len(z) != len(x):
        raise ValueError("full-batch training needs as many noise vectors as data points")
    theta = setup.theta
    log = TrainLog() if log is None else log
    probe_rng = np.random.default_rng([config.seed, 2])

    def solve(th, warm=None):
        batch = setup.linear_batch(th, x, z)
        lam, g, rep = solve_dual_linear(batch, config.dual_tol, config.dual_max_iter, init=warm)
        return batch, lam, g, rep

    batch, lam, g, _ = solve(theta)
    adam = AdamState.zeros(theta.size)
    step = config.gen_lr
    for it in range(config.iterations):
        if config.check_weak_duality:
            _weak_duality_probe(batch, g, probe_rng)
        log.append(iter=it, wall_ms=setup.wall(), **_dual_record(batch, lam, g))
        lam_snapshot = lam.rescaled()
        log.lambdas[it] = lam_snapshot
        setup.maybe_dump(log, it, theta)
        grad = generator_gradient_from_dual(lam, batch)
        if config.line_search:
            trials = {}

            def value(th):
                key = th.tobytes()
                if key not in trials:
                    trials[key] = solve(th, warm=lam)
                return trials[key][2]

            t = backtracking_linesearch(value, theta, grad, init_step=step, f0=g)
            if t > 0:
                theta = theta + t * grad
                batch, lam, g, _ = trials[theta.tobytes()]
                step = 2.0 * t
            else:
                step = config.gen_lr
        else:
            theta, adam = adam_step(theta, -grad, adam, config.gen_lr, config.beta1,
                                    config.beta2, config.adam_eps)
            batch, lam, g, _ = solve(theta)
    return setup.finish(log, theta, recover_weights(lam, batch))


def train_dual_linear_minibatch(config, data, generator=None, fixed_noise=None, log=None):
    """Fresh data and noise batches every iteration, dual solved from lam = 1/(4n),
    one Adam ascent step on theta per solved batch."""
    setup = _Setup(config, data, generator)
    n = config.batch_size
    theta = setup.theta
    adam = AdamState.zeros(theta.size)
    log = TrainLog() if log is None else log
    probe_rng = np.random.default_rng([config.seed, 2])
    batch = lam = None
    for it in range(config.iterations):
        x = setup.data_batch(n)
        z = setup.noise_batch(len(x)) if fixed_noise is None else fixed_noise
        batch = setup.linear_batch(theta, x, z)
        lam, g, _ = solve_dual_linear(batch, config.dual_tol, config.dual_max_iter)
        if config.check_weak_duality:
            _weak_duality_probe(batch, g, probe_rng)
        log.append(iter=it, wall_ms=setup.wall(), **_dual_record(batch, lam, g))
        log.lambdas[it] = lam.rescaled()
        setup.maybe_dump(log, it, theta)
        grad = generator_gradient_from_dual(lam, batch)
        theta, adam = adam_step(theta, -grad, adam, config.gen_lr, config.beta1, config.beta2,
                                config.adam_eps)
    w = recover_weights(lam, batch) if batch is not None else setup.w
    return setup.finish(log, theta, w)


def train_dual_linear(config, data, **kw):
    if config.full_batch:
        return train_dual_linear_fullbatch(config, data, **kw)
    return train_dual_linear_minibatch(config, data, **kw)


def train_standard_gan(config, data, generator=None, log=None):
    """Alternating Adam updates: discriminator descent, then generator ascent."""
    setup = _Setup(config, data, generator)
    theta, w = setup.theta, setup.w
    adam_g = AdamState.zeros(theta.size)
    adam_d = AdamState.zeros(w.size)
    log = TrainLog() if log is None else log
    fixed_z = setup.noise_batch(len(setup.data)) if config.full_batch else None
    for it in range(config.iterations):
        x = setup.data if config.full_batch else setup.data_batch(config.batch_size)
        z = fixed_z if config.full_batch else setup.noise_batch(len(x))
        f, _, grad_w = gan_objective(setup.generator, setup.scorer, theta, w, x, z, with_grads=True)
        F_x, _ = setup.scorer.scores(w, x)
        F_z, _ = setup.scorer.scores(w, setup.generator(theta, z)[0])
        log.append(iter=it, f_primal=f, disc_acc=discriminator_accuracy(F_x, F_z),
                   wall_ms=setup.wall())
        setup.maybe_dump(log, it, theta)
        w, adam_d = adam_step(w, grad_w, adam_d, config.disc_lr, config.beta1, config.beta2,
                              config.adam_eps)
        _, grad_theta, _ = gan_objective(setup.generator, setup.scorer, theta, w, x, z,
                                         with_grads=True)
        theta, adam_g = adam_step(theta, -grad_theta, adam_g, config.gen_lr, config.beta1,
                                  config.beta2, config.adam_eps)
    return setup.finish(log, theta, w)


def regularized_objective(setup, theta, w, x, z, with_grads=False):
    """GAN objective plus C/2 |w|^2, the function both local models approximate."""
    C = setup.config.C
    out = gan_objective(setup.generator, setup.scorer, theta, w, x, z, with_grads)
    if not with_grads:
        return out + 0.5 * C * (w @ w)
    f, gt, gw = out
    return f + 0.5 * C * (w @ w), gt, gw + C * w


def score_lin_data(setup, theta, w, x, z):
    F_x, dF_x = setup.scorer.per_sample_grads(w, x)
    F_z, dF_z = setup.scorer.per_sample_grads(w, setup.generator(theta, z)[0])
    return ScoreLinData(F_x, F_z, dF_x, dF_z, w, setup.config.C)


def train_trust_region(config, data, model_kind=None, generator=None, log=None):
    """Generator ascent, then a trust-region discriminator step.

    Per iteration: ``generator_steps_per_iter`` Adam ascent steps on f with
    respect to theta, then a step s minimizing the local model (cost or
    score linearization) inside 0.5 |s|^2 <= delta, then w <- w + s. With
    ``delta_adaptive`` the acceptance ratio decides whether to shrink delta
    and re-solve before the step is applied.
    """
    kind = model_kind or {"tr_cost_lin": "cost_lin", "tr_score_lin": "score_lin"}[config.trainer_kind]
    if kind not in ("cost_lin", "score_lin"):
        raise ValueError(f"unknown model kind {kind!r}")
    setup = _Setup(config, data, generator)
    theta, w = setup.theta, setup.w
    adam = AdamState.zeros(theta.size)
    state = TrustRegionState(w, config.delta, adaptive=config.delta_adaptive)
    log = TrainLog() if log is None else log
    for it in range(config.iterations):
        x = setup.data if config.full_batch else setup.data_batch(config.batch_size)
        z = setup.noise_batch(len(x))
        for _ in range(config.generator_steps_per_iter):
            _, grad_theta, _ = regularized_objective(setup, theta, w, x, z, with_grads=True)
            theta, adam = adam_step(theta, -grad_theta, adam, config.gen_lr, config.beta1,
                                    config.beta2, config.adam_eps)
        f_k, _, grad_w = regularized_objective(setup, theta, w, x, z, with_grads=True)
        data_k = score_lin_data(setup, theta, w, x, z) if kind == "score_lin" else None
        state.rejections = 0
        lam = None
        while True:
            if kind == "cost_lin":
                s = step_cost_lin(grad_w, state.delta)
                m = model_cost_lin(s, f_k, grad_w)
                active = bool(np.any(s))
            else:
                lam, s, m, _ = solve_tr_dual(data_k, state.delta)
                active = lam.lambda_T > 0
            f_new = regularized_objective(setup, theta, w + s, x, z)
            try:
                rho = acceptance_ratio(f_k, f_new, m)
            except DegenerateModel:
                rho = np.nan
            if not state.adaptive:
                break
            # a degenerate model counts as a failed step: shrink, or give up after max_resolves
            decision = update_delta(state, rho if np.isfinite(rho) else 0.0, active)
            if decision.forced:
                s = np.zeros_like(w)
                break
            state.delta = decision.delta
            if decision.accept:
                break
            state.rejections += 1
        F_x = data_k.F_x if data_k is not None else setup.scorer.scores(w, x)[0]
        F_z = (data_k.F_z if data_k is not None
               else setup.scorer.scores(w, setup.generator(theta, z)[0])[0])
        row = dict(iter=it, f_primal=f_k, g_dual_or_model=m, disc_acc=discriminator_accuracy(F_x, F_z),
                   delta=state.delta, rho=rho, wall_ms=setup.wall())
        if lam is not None:
            resc = 2 * lam.lambda_x.size * lam.stacked
            row.update(_lambda_stats(resc))
            log.lambdas[it] = resc
        log.append(**row)
        setup.maybe_dump(log, it, theta)
        w = w + s
        state.w_k = w
    return setup.finish(log, theta, w)


def train(config, data, **kw):
    """Dispatch on ``config.trainer_kind``."""
    if config.trainer_kind == "dual_linear":
        return train_dual_linear(config, data, **kw)
    if config.trainer_kind == "standard":
        return train_standard_gan(config, data, **kw)
    return train_trust_region(config, data, **kw)
