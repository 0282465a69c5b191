"""Projection model, its reverse-mode gradients, and the Adam optimizer.

The model is a plain ReLU multilayer perceptron mapping raw feature vectors to
an r-dimensional space. Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateRepresentationError,
    InputShapeError,
    OptimizerAbort,
    StaleCacheError,
)

NORM_FLOOR = 1e-12


class ProjectionModel:
    """ReLU MLP with a linear output layer.

    ``weights[l]`` has shape (fan_in, fan_out) so a batch ``X`` of shape
    (n, d_in) maps as ``X @ W + b``.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ConfigurationError("need one bias per weight matrix and at least one layer")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigurationError(f"layer {l}: weight {w.shape} and bias {b.shape} disagree")
            if l and w.shape[0] != self.weights[l - 1].shape[1]:
                raise ConfigurationError(f"layer {l}: fan-in {w.shape[0]} does not match previous layer")
        if self.weights[-1].shape[1] < 2:
            raise ConfigurationError("output dimension must be at least 2")
        # bumped by every optimizer step; forward caches remember it
        self.version = 0

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def d_in(self):
        return self.weights[0].shape[0]

    @property
    def r(self):
        return self.weights[-1].shape[1]

    def parameters(self):
        params = {}
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"W{l}"] = w
            params[f"b{l}"] = b
        return params

    def n_params(self):
        return sum(p.size for p in self.parameters().values())

    def copy(self):
        return ProjectionModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __repr__(self):
        return f"ProjectionModel(layer_dims={self.layer_dims})"


def init_model(layer_dims, seed) -> ProjectionModel:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ConfigurationError(f"invalid layer_dims {layer_dims!r}")
    if dims[-1] < 2:
        raise ConfigurationError("output dimension r must be at least 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = init_scale(fan_in, fan_out)
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ProjectionModel(weights, biases)


def init_scale(fan_in, fan_out):
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


@dataclass
class ForwardCache:
    inputs: list  # input to each layer
    pre: list  # pre-activation of each hidden layer
    h: np.ndarray
    version: int
    single: bool


def forward(model: ProjectionModel, x):
    """Return ``(h, cache)`` for one vector of length d_in or a batch (n, d_in)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.d_in:
        raise InputShapeError(f"expected input of width {model.d_in}, got shape {x.shape}")
    inputs, pre = [], []
    a = X
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(a)
        u = a @ w + b
        if l < last:
            pre.append(u)
            a = np.maximum(u, 0.0)
        else:
            a = u
    cache = ForwardCache(inputs, pre, a, model.version, single)
    return (a[0] if single else a), cache


def normalize(h):
    """Scale rows of ``h`` to unit l2 norm."""
    h = np.asarray(h, dtype=np.float64)
    norms = np.linalg.norm(h, axis=-1, keepdims=True)
    if np.any(norms < NORM_FLOOR) or not np.all(np.isfinite(norms)):
        raise DegenerateRepresentationError(
            f"representation norm {float(norms.min()):.3g} is below {NORM_FLOOR:g}"
        )
    return h / norms


def normalize_backward(h, grad_z):
    """Pull a gradient w.r.t. z = h/||h|| back to h: (I - z z^T) g / ||h||."""
    h = np.asarray(h, dtype=np.float64)
    g = np.asarray(grad_z, dtype=np.float64)
    norms = np.linalg.norm(h, axis=-1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise DegenerateRepresentationError(
            f"representation norm {float(norms.min()):.3g} is below {NORM_FLOOR:g}"
        )
    z = h / norms
    return (g - z * np.sum(z * g, axis=-1, keepdims=True)) / norms


def backward(model: ProjectionModel, cache: ForwardCache, grad_z):
    """Parameter gradients of ``sum(z * grad_z)`` where z = normalize(forward(x)).

    The normalization Jacobian is applied here, so ``grad_z`` is the gradient
    with respect to the unit-norm representation.
    """
    if cache.version != model.version:
        raise StaleCacheError(
            f"cache built at model version {cache.version}, model is at {model.version}"
        )
    g = np.asarray(grad_z, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if g.shape != cache.h.shape:
        raise InputShapeError(f"gradient shape {g.shape} does not match output {cache.h.shape}")
    delta = normalize_backward(cache.h, g)
    grads = {}
    for l in range(len(model.weights) - 1, -1, -1):
        grads[f"W{l}"] = cache.inputs[l].T @ delta
        grads[f"b{l}"] = delta.sum(axis=0)
        if l:
            delta = (delta @ model.weights[l].T) * (cache.pre[l - 1] > 0)
    return {name: grads[name] for name in model.parameters()}


def embed(model: ProjectionModel, X):
    """Unit-norm representations of a batch, no cache kept."""
    h, _ = forward(model, X)
    return normalize(h)


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model, lr=5e-4, **kw):
        state = cls(lr=lr, **kw)
        for name, p in model.parameters().items():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        return state


def adam_step(model, state: AdamState, grads) -> None:
    """One bias-corrected Adam update, in place on ``model`` and ``state``.

    ``model`` is anything exposing ``parameters()``; gradients are checked for
    finiteness before any parameter is touched.
    """
    params = model.parameters()
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InputShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise OptimizerAbort(name)
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    if hasattr(model, "version"):
        model.version += 1
