"""Flat-parameter MLPs with a recorded tape for reverse-mode gradients.

Only what the toy experiments need: fully-connected layers with relu, tanh
or sigmoid nonlinearities, evaluated on a batch of inputs in float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid")
OUTPUT_KINDS = ("linear", "sigmoid")
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Raised when arrays do not fit the network they are fed to."""

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"layer {layer}: {message}")
        self.layer = layer


@dataclass(frozen=True)
class MLPSpec:
    layer_sizes: tuple
    activations: tuple = ()
    output_kind: str = "linear"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if len(acts) != len(sizes) - 2:
            raise ValueError(
                f"expected {len(sizes) - 2} hidden activations, got {len(acts)}"
            )
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.output_kind not in OUTPUT_KINDS:
            raise ValueError(f"unknown output kind {self.output_kind!r}")

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def d_in(self):
        return self.layer_sizes[0]

    @property
    def d_out(self):
        return self.layer_sizes[-1]

    def layout(self):
        """(shape, offset) for every weight and bias block, in storage order."""
        blocks = []
        offset = 0
        for d_in, d_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            blocks.append(((d_out, d_in), offset))
            offset += d_out * d_in
            blocks.append(((d_out,), offset))
            offset += d_out
        return tuple(blocks)

    @property
    def n_params(self):
        return sum(s * t for s, t in zip(self.layer_sizes[:-1], self.layer_sizes[1:])) + sum(
            self.layer_sizes[1:]
        )

    def layer_activation(self, i):
        return self.activations[i] if i < self.n_layers - 1 else self.output_kind

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "activations": list(self.activations),
            "output_kind": self.output_kind,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_sizes"]), tuple(d.get("activations", ())), d.get("output_kind", "linear"))


@dataclass
class ParamVector:
    """One flat float64 array plus the block layout it is cut into."""

    values: np.ndarray
    layout: tuple = field(default=())

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        expected = sum(int(np.prod(shape)) for shape, _ in self.layout)
        if self.layout and expected != self.values.size:
            raise ShapeError(
                f"parameter vector has {self.values.size} entries, layout needs {expected}"
            )

    @classmethod
    def zeros(cls, spec):
        return cls(np.zeros(spec.n_params), spec.layout())

    def __len__(self):
        return self.values.size

    def block(self, j):
        shape, offset = self.layout[j]
        size = int(np.prod(shape))
        return self.values[offset : offset + size].reshape(shape)

    def layer(self, i):
        """(W, b) views for layer ``i``; W has shape (d_out, d_in)."""
        return self.block(2 * i), self.block(2 * i + 1)

    def with_values(self, values):
        return ParamVector(np.array(values, dtype=np.float64), self.layout)

    def copy(self):
        return self.with_values(self.values.copy())


def init_params(spec, rng, gain=1.0):
    """Glorot-normal weights, zero biases."""
    p = ParamVector.zeros(spec)
    for i in range(spec.n_layers):
        W, _ = p.layer(i)
        d_out, d_in = W.shape
        W[...] = rng.normal(0.0, gain * np.sqrt(2.0 / (d_in + d_out)), size=W.shape)
    return p


def _act(kind, x):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    return x


def _act_grad(kind, pre, out):
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(out)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # exp of a non-positive argument only
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass
class _Node:
    op: str
    layer: int
    saved: dict


class Tape:
    """Linear record of a forward pass through an MLP."""

    def __init__(self, spec, params, inputs):
        self.spec = spec
        self.params = params
        self.inputs = inputs
        self.nodes = []
        self.outputs = None

    def record(self, op, layer, **saved):
        self.nodes.append(_Node(op, layer, saved))

    def backward(self, output_adjoints, per_sample=False):
        """Replay adjoints from the last node to the first.

        Returns ``(param_grad, input_adjoint)``. With ``per_sample`` the
        parameter gradient is an (n, P) matrix with one row per input row
        instead of a summed ParamVector.
        """
        adj = np.asarray(output_adjoints, dtype=np.float64)
        if adj.shape != self.outputs.shape:
            raise ShapeError(
                f"adjoint shape {adj.shape} does not match outputs {self.outputs.shape}"
            )
        n = adj.shape[0]
        P = len(self.params)
        grad = np.zeros((n, P)) if per_sample else np.zeros(P)
        for node in reversed(self.nodes):
            if node.op == "act":
                adj = adj * _act_grad(node.saved["kind"], node.saved["pre"], node.saved["out"])
            else:
                x = node.saved["x"]
                W, _ = self.params.layer(node.layer)
                (w_shape, w_off), (b_shape, b_off) = self.params.layout[2 * node.layer : 2 * node.layer + 2]
                w_size = w_shape[0] * w_shape[1]
                if per_sample:
                    grad[:, w_off : w_off + w_size] = np.einsum("ni,nj->nij", adj, x).reshape(n, -1)
                    grad[:, b_off : b_off + b_shape[0]] = adj
                else:
                    grad[w_off : w_off + w_size] = (adj.T @ x).reshape(-1)
                    grad[b_off : b_off + b_shape[0]] = adj.sum(axis=0)
                adj = adj @ W
        if per_sample:
            return grad, adj
        return self.params.with_values(grad), adj


def forward_mlp(spec, params, inputs):
    """Evaluate the network on a batch; returns ``(outputs, tape)``."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if len(params) != spec.n_params:
        raise ShapeError(f"spec needs {spec.n_params} parameters, got {len(params)}")
    if x.ndim != 2 or x.shape[1] != spec.d_in:
        raise ShapeError(f"expected inputs of width {spec.d_in}, got shape {x.shape}", layer=0)
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs contain non-finite values")
    tape = Tape(spec, params, x)
    h = x
    for i in range(spec.n_layers):
        W, b = params.layer(i)
        if h.shape[1] != W.shape[1]:
            raise ShapeError(f"width {h.shape[1]} does not match weight {W.shape}", layer=i)
        tape.record("affine", i, x=h)
        pre = h @ W.T + b
        kind = spec.layer_activation(i)
        if kind == "linear":
            h = pre
        else:
            h = _act(kind, pre)
            tape.record("act", i, kind=kind, pre=pre, out=h)
    tape.outputs = h
    return h, tape


def grad_params(tape, output_adjoints):
    """Gradient of sum(adjoint * outputs) with respect to the parameters."""
    return tape.backward(output_adjoints)[0]


def per_sample_score_grads(spec, params, inputs):
    """Row i is the parameter gradient of the scalar score F(w, x_i)."""
    if spec.d_out != 1:
        raise ShapeError(f"per-sample score gradients need a scalar output, spec has {spec.d_out}")
    out, tape = forward_mlp(spec, params, inputs)
    rows, _ = tape.backward(np.ones_like(out), per_sample=True)
    return rows


def finite_diff_check(function, point, eps=1e-5, analytic=None):
    """Max over coordinates of |analytic - central difference| / (1 + |analytic|).

    ``function`` maps a flat array (or ParamVector) to ``(value, grad)``; the
    analytic gradient is taken at ``point`` unless given explicitly.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = point.values if isinstance(point, ParamVector) else np.asarray(point, dtype=np.float64)
    wrap = (lambda v: point.with_values(v)) if isinstance(point, ParamVector) else (lambda v: v)
    if analytic is None:
        _, analytic = function(wrap(x0.copy()))
    analytic = analytic.values if isinstance(analytic, ParamVector) else np.asarray(analytic)
    errs = np.empty(x0.size)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += eps
        xm[i] -= eps
        fp = function(wrap(xp))[0]
        fm = function(wrap(xm))[0]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value when perturbing coordinate {i}")
        fd = (fp - fm) / (2 * eps)
        errs[i] = abs(analytic[i] - fd) / (1.0 + abs(analytic[i]))
    return float(errs.max()) if errs.size else 0.0


def save_checkpoint(path, spec, params, **extra):
    """JSON checkpoint: format version, spec, flat values (repr round-trips exactly)."""
    record = {
        "format": "dualgan-mlp",
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "values": [float(v) for v in params.values],
    }
    record.update(extra)
    Path(path).write_text(json.dumps(record, indent=1))


def load_checkpoint(path):
    record = json.loads(Path(path).read_text())
    if record.get("format") != "dualgan-mlp" or record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} dualgan checkpoint")
    spec = MLPSpec.from_dict(record["spec"])
    return spec, ParamVector(np.array(record["values"]), spec.layout())
