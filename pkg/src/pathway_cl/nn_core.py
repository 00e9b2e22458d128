"""Dense feed-forward networks over a single flat float64 parameter vector.

Layer ``l`` maps ``m -> n`` and owns ``m*n`` weights (row-major, shape ``(n, m)``)
followed by ``n`` biases. Hidden layers apply the activation; the last layer is
linear and feeds the head (softmax cross-entropy or squared error).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")
HEADS = ("softmax_xent", "mse")
SCHEDULE_MODES = ("constant", "inverse_t")


@dataclass(frozen=True)
class NetArch:
    layer_widths: tuple
    activation: str = "relu"
    head: str = "softmax_xent"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ConfigError(f"need at least 2 layer widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ConfigError(f"layer widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}")

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_params(self) -> int:
        w = self.layer_widths
        return sum(m * n + n for m, n in zip(w[:-1], w[1:]))

    def layer_offsets(self):
        """Yield ``(w_start, b_start, b_end, m, n)`` for each layer."""
        off = 0
        w = self.layer_widths
        for m, n in zip(w[:-1], w[1:]):
            yield off, off + m * n, off + m * n + n, m, n
            off += m * n + n

    def flops_per_sample(self) -> int:
        # dense m->n: m*n multiplies + m*n adds + n bias adds
        w = self.layer_widths
        return sum(2 * m * n + n for m, n in zip(w[:-1], w[1:]))


@dataclass(frozen=True)
class LrSchedule:
    eta0: float
    mode: str = "constant"
    beta: float = 0.0

    def __post_init__(self):
        if not self.eta0 >= 0:  # zero is allowed: a frozen step
            raise ConfigError(f"eta0 must be nonnegative, got {self.eta0}")
        if self.mode not in SCHEDULE_MODES:
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if self.beta < 0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")

    def rate(self, t: int) -> float:
        if self.mode == "constant":
            return self.eta0
        return self.eta0 / (1.0 + self.beta * t)


@dataclass
class Cache:
    """Activations recorded by :func:`forward`, consumed by :func:`backward`."""

    arch: NetArch
    params: np.ndarray  # copy of the parameters used, for staleness checks
    inputs: list  # input to each layer, shape (n, m)
    preacts: list  # pre-activation of each layer, shape (n, n_out_l)
    output: np.ndarray
    single: bool
    activate_last: bool = False
    logits: Optional[np.ndarray] = field(default=None)


def init_params(arch: NetArch, rng) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng)
    theta = np.zeros(arch.n_params)
    for w0, b0, _, m, n in arch.layer_offsets():
        s = np.sqrt(6.0 / (m + n))
        theta[w0:b0] = rng.uniform(-s, s, size=m * n)
    return theta


def activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def activation_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(x, width):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"expected input width {width}, got shape {x.shape}")
    return x, single


def _check_params(arch, params):
    params = np.asarray(params, dtype=float)
    if params.shape != (arch.n_params,):
        raise ShapeError(f"expected {arch.n_params} parameters, got shape {params.shape}")
    return params


def forward(arch: NetArch, params, x, *, activate_last: bool = False):
    """Run the network on one vector or a batch of row vectors.

    With ``activate_last`` the final layer is treated as a hidden layer (activation
    applied, head skipped); this is how a feature encoder is evaluated.
    """
    params = _check_params(arch, params)
    a, single = _as_batch(x, arch.n_in)
    inputs, preacts = [], []
    last = arch.n_layers - 1
    for i, (w0, b0, b1, m, n) in enumerate(arch.layer_offsets()):
        W = params[w0:b0].reshape(n, m)
        inputs.append(a)
        z = a @ W.T + params[b0:b1]
        preacts.append(z)
        a = activate(arch.activation, z) if (i < last or activate_last) else z
    logits = None
    if not activate_last and arch.head == "softmax_xent":
        logits = a
        a = softmax(a)
    out = a[0] if single else a
    cache = Cache(arch, params.copy(), inputs, preacts, a, single, activate_last, logits)
    return out, cache


def _target_matrix(arch, target, n):
    t = np.asarray(target)
    if arch.head == "softmax_xent" and t.ndim <= 1 and np.issubdtype(t.dtype, np.integer):
        t = np.atleast_1d(t)
        if t.shape != (n,):
            raise ShapeError(f"expected {n} labels, got shape {t.shape}")
        if t.min(initial=0) < 0 or t.max(initial=0) >= arch.n_out:
            raise ShapeError("class label out of range")
        onehot = np.zeros((n, arch.n_out))
        onehot[np.arange(n), t] = 1.0
        return onehot
    t = np.asarray(t, dtype=float)
    if t.ndim == 1:
        t = t[None, :]
    if t.shape != (n, arch.n_out):
        raise ShapeError(f"expected targets of shape {(n, arch.n_out)}, got {t.shape}")
    return t


def per_sample_loss(arch: NetArch, output, target) -> np.ndarray:
    out = np.atleast_2d(np.asarray(output, dtype=float))
    t = _target_matrix(arch, target, out.shape[0])
    if arch.head == "softmax_xent":
        return -np.sum(t * np.log(np.clip(out, 1e-300, None)), axis=1)
    return 0.5 * np.sum((out - t) ** 2, axis=1)


def loss(arch: NetArch, output, target) -> float:
    """Batch-mean head loss."""
    return float(np.mean(per_sample_loss(arch, output, target)))


def backprop(arch: NetArch, params, cache: Cache, delta_out, *, per_sample=False):
    """Propagate ``dL/d(last pre-activation)`` back through the layers.

    Returns ``(param_grad, input_grad)``. ``delta_out`` rows are summed, so callers
    fold any batch averaging into it. With ``per_sample`` the parameter gradient
    has one row per sample.
    """
    params = np.asarray(params, dtype=float)
    same = cache.params.shape == params.shape and np.array_equal(cache.params, params, equal_nan=True)
    if cache.arch != arch or not same:
        raise ContractError("stale cache: parameters changed since forward()")
    layers = list(arch.layer_offsets())
    nb = delta_out.shape[0]
    grad = np.zeros((nb, arch.n_params)) if per_sample else np.zeros(arch.n_params)
    delta = delta_out
    for i in range(len(layers) - 1, -1, -1):
        w0, b0, b1, m, n = layers[i]
        a_in = cache.inputs[i]
        if per_sample:
            grad[:, w0:b0] = (delta[:, :, None] * a_in[:, None, :]).reshape(nb, m * n)
            grad[:, b0:b1] = delta
        else:
            grad[w0:b0] = (delta.T @ a_in).ravel()
            grad[b0:b1] = delta.sum(axis=0)
        W = params[w0:b0].reshape(n, m)
        delta = delta @ W
        if i > 0:
            z = cache.preacts[i - 1]
            delta = delta * activation_grad(arch.activation, z, a_in)
    return grad, delta


def output_delta(arch: NetArch, cache: Cache, target) -> np.ndarray:
    """Per-sample ``dloss_n/d(last pre-activation)`` (not batch-averaged)."""
    n = cache.output.shape[0]
    t = _target_matrix(arch, target, n)
    # softmax+xent and identity+mse share the same residual form
    return cache.output - t


def backward(arch: NetArch, params, cache: Cache, target, *, per_sample=False) -> np.ndarray:
    """Gradient of the batch-mean head loss (or per-sample losses) w.r.t. params."""
    if cache.activate_last:
        raise ContractError("cache came from an encoder pass; use backprop() with an upstream gradient")
    delta = output_delta(arch, cache, target)
    if not per_sample:
        delta = delta / delta.shape[0]
    grad, _ = backprop(arch, params, cache, delta, per_sample=per_sample)
    return grad


def sgd_step(params, gradient, schedule: LrSchedule, t: int) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if params.shape != gradient.shape:
        raise ShapeError(f"params {params.shape} vs gradient {gradient.shape}")
    if t < 1:
        raise ConfigError(f"step index must be >= 1, got {t}")
    if not np.all(np.isfinite(gradient)):
        raise NumericError("non-finite gradient entries")
    return params - schedule.rate(t) * gradient
