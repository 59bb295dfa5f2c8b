"""Small fully connected networks with hand-written reverse mode and Adam.

A :class:`DenseNetwork` keeps all its weights and biases in one flat float64
vector (``net.params``); per-layer matrices are views into it. Several
networks can share one larger buffer, which is how the VAE trains all its
sub-networks with a single Adam state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NonFiniteError, ShapeError, UsageError

ACTIVATIONS = {
    "linear": kernels.LINEAR,
    "tanh": kernels.TANH,
    "sigmoid": kernels.SIGMOID,
    "quaternion_normalizer": kernels.QUATERNION_NORMALIZER,
}


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    activation: str = "tanh"

    def __post_init__(self):
        if int(self.input_width) < 1 or int(self.output_width) < 1:
            raise ShapeError(f"layer widths must be >= 1, got {self.input_width}->{self.output_width}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.activation == "quaternion_normalizer" and self.output_width != 4:
            raise ShapeError("quaternion_normalizer needs output_width 4")

    @property
    def size(self):
        return self.input_width * self.output_width + self.output_width


def param_count(specs):
    return sum(s.size for s in specs)


class DenseNetwork:
    """Feed-forward stack of dense layers.

    ``params`` may be supplied (e.g. a slice of a shared buffer); it is used
    in place, not copied.
    """

    def __init__(self, specs, params=None):
        self.specs = tuple(specs)
        for prev, nxt in zip(self.specs, self.specs[1:]):
            if prev.output_width != nxt.input_width:
                raise ShapeError(f"layer widths do not chain: {prev.output_width} -> {nxt.input_width}")
        rows = []
        off = 0
        for s in self.specs:
            w_off = off
            b_off = off + s.input_width * s.output_width
            rows.append((s.input_width, s.output_width, ACTIVATIONS[s.activation], w_off, b_off))
            off = b_off + s.output_width
        self.layout = np.array(rows, dtype=np.int64).reshape(-1, 5)
        if params is None:
            params = np.zeros(off)
        if params.shape != (off,) or params.dtype != np.float64:
            raise ShapeError(f"parameter buffer must be float64 of length {off}")
        self.params = params
        self.version = 0
        self.guard_count = 0

    @classmethod
    def build(cls, widths, activations, rng=None, params=None):
        """``widths`` has one more entry than ``activations``."""
        if len(widths) != len(activations) + 1:
            raise ShapeError("need len(widths) == len(activations) + 1")
        specs = [LayerSpec(int(a), int(b), act) for a, b, act in zip(widths, widths[1:], activations)]
        net = cls(specs, params)
        if rng is not None:
            net.init_glorot(rng)
        return net

    @property
    def parameter_count(self):
        return int(self.params.size)

    @property
    def input_width(self):
        return self.specs[0].input_width if self.specs else None

    @property
    def output_width(self):
        return self.specs[-1].output_width if self.specs else None

    def weights(self, i):
        n_in, n_out, _, w_off, _ = self.layout[i]
        return self.params[w_off:w_off + n_in * n_out].reshape(n_out, n_in)

    def biases(self, i):
        _, n_out, _, _, b_off = self.layout[i]
        return self.params[b_off:b_off + n_out]

    def init_glorot(self, rng):
        """Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases."""
        for i, s in enumerate(self.specs):
            limit = np.sqrt(6.0 / (s.input_width + s.output_width))
            self.weights(i)[...] = rng.uniform(-limit, limit, size=(s.output_width, s.input_width))
            self.biases(i)[...] = 0.0

    def mark_updated(self):
        self.version += 1

    def locate(self, index):
        """Human-readable name of the layer holding flat parameter ``index``."""
        for i, (n_in, n_out, _, w_off, b_off) in enumerate(self.layout):
            if w_off <= index < b_off:
                return f"layer {i} weights"
            if b_off <= index < b_off + n_out:
                return f"layer {i} bias"
        return "unknown"

    def __call__(self, x):
        return forward(self, x)[0]

    def to_dict(self):
        return {
            "layers": [
                {
                    "input_width": s.input_width,
                    "output_width": s.output_width,
                    "activation": s.activation,
                    "weights": self.weights(i).tolist(),
                    "bias": self.biases(i).tolist(),
                }
                for i, s in enumerate(self.specs)
            ]
        }

    @classmethod
    def from_dict(cls, d, params=None):
        specs = [LayerSpec(l["input_width"], l["output_width"], l["activation"]) for l in d["layers"]]
        net = cls(specs, params)
        for i, layer in enumerate(d["layers"]):
            net.weights(i)[...] = np.asarray(layer["weights"], dtype=float)
            net.biases(i)[...] = np.asarray(layer["bias"], dtype=float)
        return net


class ForwardCache:
    __slots__ = ("net", "version", "x", "zbuf", "abuf")

    def __init__(self, net, x, zbuf, abuf):
        self.net = net
        self.version = net.version
        self.x = x
        self.zbuf = zbuf
        self.abuf = abuf


def forward(net: DenseNetwork, x):
    """Run ``net`` on a vector or an (N, in) batch; return output and cache."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.ascontiguousarray(x.reshape(1, -1) if single else x)
    if not net.specs:
        return (x2[0] if single else x2).copy(), ForwardCache(net, x2, np.empty(0), np.empty(0))
    if x2.shape[1] != net.input_width:
        raise ShapeError(f"input width {x2.shape[1]} does not match network input {net.input_width}")
    zbuf, abuf, guarded = kernels.forward(net.params, net.layout, x2)
    net.guard_count += int(guarded)
    n_out = net.output_width
    y = abuf[len(abuf) - x2.shape[0] * n_out:].reshape(x2.shape[0], n_out)
    return (y[0] if single else y), ForwardCache(net, x2, zbuf, abuf)


def backward(net: DenseNetwork, cache: ForwardCache, output_gradient, grads=None):
    """Reverse pass. Returns ``(flat parameter gradients, input gradient)``.

    ``grads``, when given, is overwritten in place.
    """
    if cache.net is not net or cache.version != net.version:
        raise UsageError("forward cache is stale or belongs to another network")
    g = np.asarray(output_gradient, dtype=float)
    single = g.ndim == 1
    g2 = np.ascontiguousarray(g.reshape(1, -1) if single else g)
    if grads is None:
        grads = np.zeros_like(net.params)
    if not net.specs:
        return grads, (g2[0] if single else g2).copy()
    if g2.shape != (cache.x.shape[0], net.output_width):
        raise ShapeError(f"output gradient shape {g2.shape} does not match forward output")
    grad_in = kernels.backward(net.params, net.layout, cache.x, cache.zbuf, cache.abuf, g2, grads)
    return grads, (grad_in[0] if single else grad_in)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros_like(params), np.zeros_like(params), 0, lr, beta1, beta2, eps)


def adam_step(net, grads, state: AdamState):
    """One bias-corrected Adam update of ``net.params`` in place.

    ``net`` is anything with ``params``, ``locate`` and ``mark_updated``.
    """
    if grads.shape != net.params.shape or state.m.shape != net.params.shape:
        raise ShapeError("gradient / optimizer state shape does not match parameters")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NonFiniteError(f"non-finite gradient in {net.locate(int(bad[0]))}")
    state.step += 1
    kernels.adam_update(net.params, grads, state.m, state.v, state.lr, state.beta1, state.beta2,
                        state.eps, state.step)
    net.mark_updated()
    return net, state


def count_parameters(net) -> int:
    return int(net.params.size)


def gradient_check(net: DenseNetwork, x, rng, h=1e-5):
    """Relative error between backprop and central differences.

    The scalar probed is ``sum(forward(x) * g)`` for a random projection
    ``g``; covers both parameter and input gradients.
    Returns ``(param_rel_err, input_rel_err)`` as norm-wise relative errors.
    """
    x = np.asarray(x, dtype=float)
    y, cache = forward(net, x)
    g = rng.standard_normal(y.shape)
    grads, grad_in = backward(net, cache, g)

    def scalar(xv):
        return float(np.sum(forward(net, xv)[0] * g))

    num = np.empty_like(net.params)
    for k in range(net.params.size):
        keep = net.params[k]
        net.params[k] = keep + h
        plus = scalar(x)
        net.params[k] = keep - h
        minus = scalar(x)
        net.params[k] = keep
        num[k] = (plus - minus) / (2 * h)
    num_in = np.empty_like(x)
    flat = num_in.reshape(-1)
    xf = x.reshape(-1).copy()
    for k in range(xf.size):
        keep = xf[k]
        xf[k] = keep + h
        plus = scalar(xf.reshape(x.shape))
        xf[k] = keep - h
        minus = scalar(xf.reshape(x.shape))
        xf[k] = keep
        flat[k] = (plus - minus) / (2 * h)

    def rel(a, b):
        denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
        return float(np.linalg.norm(a - b) / denom)

    return rel(grads, num), rel(grad_in, num_in)
