"""Ring-of-Gaussians toy data, noise priors and feature maps for linear
discriminators."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .autodiff import MLPSpec, ParamVector, forward_mlp, init_params


@dataclass(frozen=True)
class RingMixtureSpec:
    mode_count: int
    radius: float = 2.0
    covariance_scale: float = 0.1
    dimension: int = 2

    def __post_init__(self):
        if int(self.mode_count) != self.mode_count or self.mode_count < 1:
            raise ValueError(f"mode_count must be a positive integer, got {self.mode_count}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.covariance_scale >= 0:
            raise ValueError(f"covariance_scale must be non-negative, got {self.covariance_scale}")
        if self.dimension != 2:
            raise ValueError("only planar mixtures are supported")

    @property
    def centers(self):
        angles = 2 * np.pi * np.arange(self.mode_count) / self.mode_count
        return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    @property
    def std(self):
        return float(np.sqrt(self.covariance_scale))


def make_ring_mixture(k, radius=2.0, covariance_scale=0.1):
    """k isotropic Gaussians with means evenly spaced on a circle."""
    if not covariance_scale > 0:
        raise ValueError(f"covariance_scale must be positive, got {covariance_scale}")
    return RingMixtureSpec(int(k), float(radius), float(covariance_scale))


def five_gaussians():
    return make_ring_mixture(5, 2.0, 0.1)


def eight_gaussians():
    return make_ring_mixture(8, 2.0, 0.02)


def sample_mixture(spec, n, rng, return_modes=False):
    """Uniform mode choice, then an isotropic Gaussian perturbation."""
    modes = rng.integers(0, spec.mode_count, size=n)
    x = spec.centers[modes] + spec.std * rng.standard_normal((n, 2))
    return (x, modes) if return_modes else x


@dataclass(frozen=True)
class NoiseSpec:
    distribution: str = "gaussian"
    dimension: int = 8

    def __post_init__(self):
        if self.distribution not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise distribution {self.distribution!r}")
        if self.dimension < 1:
            raise ValueError("noise dimension must be at least 1")


def sample_noise(spec, n, rng):
    if spec.distribution == "gaussian":
        return rng.standard_normal((n, spec.dimension))
    return rng.uniform(-1.0, 1.0, size=(n, spec.dimension))


def rbf_features(x, anchors, T):
    """Normalized RBF responses exp(-|x - a_j|^2 / T) / Z for each anchor.

    Accepts one point (d,) or a batch (n, d).
    """
    if T <= 0:
        raise ValueError("temperature must be positive")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    logits = -_sqdist(X, anchors) / T
    phi = softmax(logits, axis=1)
    return phi[0] if single else phi


def _sqdist(X, A):
    return np.maximum((X * X).sum(1)[:, None] - 2 * X @ A.T + (A * A).sum(1)[None, :], 0.0)


def rbf_log_normalizer(x, anchors, T):
    return logsumexp(-_sqdist(np.atleast_2d(x), anchors) / T, axis=1)


class FeatureMap:
    """phi(x) for a linear discriminator, with a vector-Jacobian product.

    kinds: ``identity``, ``rbf`` (anchors, temperature) and ``random_net``
    (a frozen random MLP whose hidden activations are concatenated).
    """

    def __init__(self, kind="identity", anchors=None, temperature=0.2, net_spec=None,
                 net_params=None, concat_layers=True):
        self.kind = kind
        if kind == "rbf":
            if anchors is None or len(anchors) == 0:
                raise ValueError("rbf features need at least one anchor")
            if not temperature > 0:
                raise ValueError("rbf temperature must be positive")
            self.anchors = np.asarray(anchors, dtype=np.float64)
            self.temperature = float(temperature)
        elif kind == "random_net":
            if net_spec is None or net_params is None:
                raise ValueError("random_net features need a spec and frozen params")
            self.net_spec = net_spec
            self.net_params = net_params.copy()
            self.net_params.values.setflags(write=False)
            self.concat_layers = concat_layers
        elif kind != "identity":
            raise ValueError(f"unknown feature kind {kind!r}")

    @classmethod
    def rbf_from_data(cls, data, n_anchors, rng, temperature=0.2):
        idx = rng.choice(len(data), size=min(n_anchors, len(data)), replace=False)
        return cls("rbf", anchors=np.array(data[idx]), temperature=temperature)

    @classmethod
    def random_net(cls, d_in, hidden, rng, activation="tanh", concat_layers=True):
        spec = MLPSpec((d_in, *hidden, 1), (activation,) * len(hidden))
        return cls("random_net", net_spec=spec, net_params=init_params(spec, rng),
                   concat_layers=concat_layers)

    def dim(self, d_in):
        if self.kind == "identity":
            return d_in
        if self.kind == "rbf":
            return len(self.anchors)
        hidden = self.net_spec.layer_sizes[1:-1]
        return sum(hidden) if self.concat_layers else hidden[-1]

    def __call__(self, x):
        """Returns ``(phi, vjp)`` with ``vjp(phi_adjoint) -> x_adjoint``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.kind == "identity":
            return x, lambda adj: np.asarray(adj)
        if self.kind == "rbf":
            phi = rbf_features(x, self.anchors, self.temperature)
            A, T = self.anchors, self.temperature

            def vjp(adj):
                # softmax pullback, then d logit_j / dx = -2 (x - a_j) / T
                g = phi * (adj - (adj * phi).sum(1, keepdims=True))
                return (2.0 / T) * (g @ A - g.sum(1, keepdims=True) * x)

            return phi, vjp
        return self._random_net(x)

    def _random_net(self, x):
        _, tape = forward_mlp(self.net_spec, self.net_params, x)
        hidden = [n.saved["out"] for n in tape.nodes if n.op == "act"]
        acts = hidden if self.concat_layers else hidden[-1:]
        phi = np.concatenate(acts, axis=1)
        widths = np.cumsum([a.shape[1] for a in acts])[:-1]

        def vjp(adj):
            parts = np.split(np.asarray(adj, dtype=np.float64), widths, axis=1)
            if not self.concat_layers:
                parts = [np.zeros_like(a) for a in hidden[:-1]] + parts
            return _hidden_vjp(tape, parts)

        return phi, vjp

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "rbf":
            d.update(anchors=self.anchors.tolist(), temperature=self.temperature)
        elif self.kind == "random_net":
            d.update(net_spec=self.net_spec.to_dict(), net_params=self.net_params.values.tolist(),
                     concat_layers=self.concat_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "rbf":
            return cls("rbf", anchors=np.array(d["anchors"]), temperature=d["temperature"])
        if d["kind"] == "random_net":
            spec = MLPSpec.from_dict(d["net_spec"])
            return cls("random_net", net_spec=spec,
                       net_params=ParamVector(np.array(d["net_params"]), spec.layout()),
                       concat_layers=d["concat_layers"])
        return cls(d["kind"])


def _hidden_vjp(tape, parts):
    """Input adjoint given an adjoint on every hidden activation of ``tape``."""
    params = tape.params
    acts = [n for n in tape.nodes if n.op == "act"]
    adj = None
    for i in reversed(range(len(acts))):
        adj = parts[i] if adj is None else adj + parts[i]
        node = acts[i]
        kind, pre, out = node.saved["kind"], node.saved["pre"], node.saved["out"]
        if kind == "relu":
            adj = adj * (pre > 0)
        elif kind == "tanh":
            adj = adj * (1 - out * out)
        else:
            adj = adj * out * (1 - out)
        W, _ = params.layer(i)
        adj = adj @ W
    return adj


def save_dataset(path, spec, data, **extra):
    """Snapshot as .npz: the sample matrix plus the mixture spec as JSON."""
    meta = {"spec": asdict(spec), **extra}
    np.savez(path, data=np.asarray(data), meta=json.dumps(meta))


def load_dataset(path):
    with np.load(path) as f:
        meta = json.loads(str(f["meta"]))
        data = f["data"]
    spec = RingMixtureSpec(**meta.pop("spec"))
    return spec, data, meta
