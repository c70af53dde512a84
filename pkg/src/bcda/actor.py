"""Feedforward network with hand-written backprop, Adam and Polyak averaging.

Used as the deterministic actor (tanh output scaled to the action bounds) and,
with a linear output, as the critic of the DDPG baseline.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

HIDDEN_SIZES = (256, 256, 256)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_MAGIC = b"MLPNET01"
_OUTPUTS = ("tanh", "linear")


@dataclass
class Mlp:
    weights: list
    biases: list
    output: str = "tanh"
    action_bound: np.ndarray | None = None
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if self.output not in _OUTPUTS:
            raise ValueError(f"unknown output activation {self.output!r}")
        if self.output == "tanh":
            if self.action_bound is None:
                self.action_bound = np.ones(self.weights[-1].shape[1])
            self.action_bound = np.asarray(self.action_bound, dtype=np.float64)
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params()]
            self.v = [np.zeros_like(p) for p in self.params()]

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    def params(self):
        """Parameters in fixed order W0, b0, W1, b1, ... (live references)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return Mlp(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases],
            self.output,
            None if self.action_bound is None else self.action_bound.copy(),
            [a.copy() for a in self.m], [a.copy() for a in self.v], self.step,
        )


def mlp_init(input_dim, output_dim, rng, action_bound=None, hidden=HIDDEN_SIZES, output="tanh",
             final_scale=None):
    """Weights uniform on +-1/sqrt(fan_in), zero biases, zero Adam state.

    ``final_scale`` overrides the limit of the last layer (DDPG uses 3e-3 so
    that initial outputs start near zero).
    """
    if input_dim < 1 or output_dim < 1:
        raise ValueError("dimensions must be >= 1")
    if action_bound is not None and np.any(np.asarray(action_bound) <= 0):
        raise ValueError("action bounds must be positive")
    sizes = [input_dim, *hidden, output_dim]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = 1.0 / np.sqrt(fan_in)
        if final_scale is not None and i == len(sizes) - 2:
            lim = final_scale
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, output, action_bound)


def _as_batch(net, x):
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected input width {net.input_dim}, got shape {X.shape}")
    return X, single


def _forward(net, X):
    acts = [X]
    h = X
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W + b
        if i < last:
            h = np.maximum(z, 0.0)
        elif net.output == "tanh":
            h = np.tanh(z)
        else:
            h = z
        acts.append(h)
    return acts


def _scale(net, y):
    return y * net.action_bound if net.output == "tanh" else y


def mlp_forward(net, x):
    X, single = _as_batch(net, x)
    y = _scale(net, _forward(net, X)[-1])
    return y[0] if single else y


def forward_with_cache(net, x):
    X, _ = _as_batch(net, x)
    acts = _forward(net, X)
    return _scale(net, acts[-1]), acts


def backward(net, acts, grad_out):
    """Backprop ``grad_out`` (dL/d output, batch rows) through a cached pass.

    Returns ``(grads, grad_input)`` where ``grads`` follows ``net.params()``.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != acts[-1].shape:
        raise DimensionMismatch(f"upstream shape {g.shape} != output shape {acts[-1].shape}")
    if net.output == "tanh":
        g = g * net.action_bound * (1.0 - acts[-1] ** 2)
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
        if i > 0:
            # ReLU subgradient at 0 is taken as 0
            g = g * (acts[i] > 0.0)
    return grads, g


def mlp_backward_chain(net, s_batch, upstream, acts=None):
    """Gradients of ``-(1/N) sum_i <upstream_i, mu(s_i)>`` w.r.t. all parameters."""
    if acts is None:
        _, acts = forward_with_cache(net, s_batch)
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 1:
        up = up[None, :]
    if up.shape[0] != acts[0].shape[0]:
        raise DimensionMismatch(f"{up.shape[0]} upstream rows for a batch of {acts[0].shape[0]}")
    grads, _ = backward(net, acts, -up / up.shape[0])
    return grads


def adam_step(net, grads, lr):
    params = net.params()
    if len(grads) != len(params):
        raise DimensionMismatch(f"{len(grads)} gradients for {len(params)} parameters")
    net.step += 1
    c1 = 1.0 - ADAM_BETA1 ** net.step
    c2 = 1.0 - ADAM_BETA2 ** net.step
    for p, g, m, v in zip(params, grads, net.m, net.v):
        if g.shape != p.shape:
            raise DimensionMismatch(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def polyak_update(target, source, rho):
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    if target.layer_sizes != source.layer_sizes:
        raise DimensionMismatch(f"architectures differ: {target.layer_sizes} vs {source.layer_sizes}")
    for pt, ps in zip(target.params(), source.params()):
        pt *= rho
        pt += (1.0 - rho) * ps


def save_mlp(net, path):
    """Same conventions as the BLS checkpoint: int64 header, then <f8 row-major."""
    sizes = net.layer_sizes
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<3q", len(sizes), _OUTPUTS.index(net.output), net.step))
        fh.write(struct.pack(f"<{len(sizes)}q", *sizes))
        if net.output == "tanh":
            fh.write(np.asarray(net.action_bound, dtype="<f8").tobytes())
        for arr in (*net.params(), *net.m, *net.v):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_mlp(path):
    def read(shape):
        count = int(np.prod(shape))
        buf = fh.read(8 * count)
        if len(buf) != 8 * count:
            raise ValueError("truncated MLP checkpoint")
        return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)

    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not an MLP checkpoint")
        n_sizes, out_idx, step = struct.unpack("<3q", fh.read(24))
        sizes = struct.unpack(f"<{n_sizes}q", fh.read(8 * n_sizes))
        output = _OUTPUTS[out_idx]
        bound = read((sizes[-1],)) if output == "tanh" else None
        shapes = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            shapes += [(a, b), (b,)]
        params = [read(s) for s in shapes]
        m = [read(s) for s in shapes]
        v = [read(s) for s in shapes]
    return Mlp(params[0::2], params[1::2], output, bound, m, v, step)
