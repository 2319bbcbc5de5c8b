"""Small dense-network kernel: layers, batch norm, activations, Adam.

Every layer exposes a functional forward/backward pair that takes the layer
input explicitly, so nothing depends on hidden caches. All kernels preserve
the dtype of their inputs; training runs in float32, gradient checks in
float64.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BatchSizeError, ConfigError, DimensionError
from .rng import Rng

ACTIVATIONS = ("relu", "tanh", "sigmoid")


# -- activations -------------------------------------------------------------

def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation_forward(kind: str, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return _sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


def activation_backward(kind: str, x: np.ndarray, upstream: np.ndarray | None = None) -> np.ndarray:
    """Derivative of the activation at ``x``, times ``upstream`` if given."""
    x = np.asarray(x)
    if kind == "relu":
        d = (x > 0).astype(x.dtype)
    elif kind == "tanh":
        d = 1 - np.tanh(x) ** 2
    elif kind == "sigmoid":
        s = _sigmoid(x)
        d = s * (1 - s)
    else:
        raise ConfigError(f"unknown activation {kind!r}")
    return d if upstream is None else d * upstream


@dataclass
class Activation:
    kind: str

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.kind!r}")


# -- dense -------------------------------------------------------------------

@dataclass
class Dense:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"inconsistent dense shapes {self.weight.shape} / {self.bias.shape}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: Rng, dtype=np.float32) -> "Dense":
        """Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias."""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(dtype)
        return cls(w, np.zeros(out_dim, dtype=dtype))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]


def _check_dense_input(x, layer):
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise DimensionError(f"dense layer expects (B, {layer.in_dim}), got {x.shape}")


def dense_forward(x: np.ndarray, layer: Dense) -> np.ndarray:
    x = np.asarray(x)
    _check_dense_input(x, layer)
    return x @ layer.weight.T + layer.bias


def dense_backward(x: np.ndarray, layer: Dense, upstream: np.ndarray):
    """Returns ``(grad_weight, grad_bias, grad_input)``."""
    x = np.asarray(x)
    _check_dense_input(x, layer)
    if upstream.shape != (x.shape[0], layer.out_dim):
        raise DimensionError(
            f"upstream gradient shape {upstream.shape} != {(x.shape[0], layer.out_dim)}")
    return upstream.T @ x, upstream.sum(axis=0), upstream @ layer.weight


# -- batch norm --------------------------------------------------------------

@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"

    def __post_init__(self):
        if not 0 < self.momentum < 1:
            raise ConfigError("momentum must lie in (0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.mode not in ("train", "inference"):
            raise ConfigError(f"unknown batch-norm mode {self.mode!r}")

    @classmethod
    def create(cls, features: int, dtype=np.float32, **kw) -> "BatchNorm":
        return cls(np.ones(features, dtype), np.zeros(features, dtype),
                   np.zeros(features, dtype), np.ones(features, dtype), **kw)

    @property
    def features(self) -> int:
        return self.gamma.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.gamma, self.beta]


def _bn_stats(x, layer, mode):
    if x.ndim != 2 or x.shape[1] != layer.features:
        raise DimensionError(f"batch norm expects (B, {layer.features}), got {x.shape}")
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchSizeError("batch norm in train mode needs at least 2 rows")
        return x.mean(axis=0), x.var(axis=0)
    return layer.running_mean, layer.running_var


def batchnorm_forward(x: np.ndarray, layer: BatchNorm, mode: str | None = None,
                      update_stats: bool = True) -> np.ndarray:
    """Normalize ``x``; train mode also folds batch stats into the running ones."""
    x = np.asarray(x)
    mode = mode or layer.mode
    mean, var = _bn_stats(x, layer, mode)
    y = layer.gamma * (x - mean) / np.sqrt(var + layer.eps) + layer.beta
    if mode == "train" and update_stats:
        b = x.shape[0]
        mom = layer.momentum
        layer.running_mean[...] = (1 - mom) * layer.running_mean + mom * mean
        layer.running_var[...] = (1 - mom) * layer.running_var + mom * var * b / (b - 1)
    return y.astype(x.dtype, copy=False)


def batchnorm_backward(x: np.ndarray, layer: BatchNorm, upstream: np.ndarray,
                       mode: str | None = None):
    """Returns ``(grad_gamma, grad_beta, grad_input)``."""
    x = np.asarray(x)
    mode = mode or layer.mode
    mean, var = _bn_stats(x, layer, mode)
    inv_std = 1.0 / np.sqrt(var + layer.eps)
    xhat = (x - mean) * inv_std
    g_gamma = (upstream * xhat).sum(axis=0)
    g_beta = upstream.sum(axis=0)
    if mode == "train":
        b = x.shape[0]
        g_x = (layer.gamma * inv_std / b) * (b * upstream - g_beta - xhat * g_gamma)
    else:
        g_x = upstream * layer.gamma * inv_std
    return g_gamma, g_beta, g_x.astype(x.dtype, copy=False)


# -- sequential stack --------------------------------------------------------

Layer = Dense | BatchNorm | Activation


class Stack:
    """Ordered layers with a cached forward pass for backprop."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        self._inputs: list[np.ndarray] | None = None
        self._train = False

    @classmethod
    def mlp(cls, dims: Sequence[int], rng: Rng, activation: str = "tanh",
            batch_norm: bool = False, final_activation: str | None = None,
            dtype=np.float32) -> "Stack":
        """Dense stack over ``dims``; hidden layers get [BN] + activation."""
        layers: list[Layer] = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            layers.append(Dense.init(a, b, rng, dtype))
            last = i == len(dims) - 2
            if last and final_activation is None:
                continue
            if batch_norm:
                layers.append(BatchNorm.create(b, dtype))
            layers.append(Activation(final_activation if last else activation))
        return cls(layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if not isinstance(layer, Activation):
                out.extend(layer.params())
        return out

    def set_mode(self, mode: str) -> None:
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                layer.mode = mode

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True) -> np.ndarray:
        self._inputs = []
        self._train = train
        for layer in self.layers:
            self._inputs.append(x)
            if isinstance(layer, Dense):
                x = dense_forward(x, layer)
            elif isinstance(layer, BatchNorm):
                x = batchnorm_forward(x, layer, "train" if train else "inference",
                                      update_stats=update_stats)
            else:
                x = activation_forward(layer.kind, x)
        return x

    __call__ = forward

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Backprop through the last forward; returns (grad_input, param grads)."""
        if self._inputs is None:
            raise RuntimeError("backward called before forward")
        mode = "train" if self._train else "inference"
        grads: list[np.ndarray] = []
        for layer, x in zip(reversed(self.layers), reversed(self._inputs)):
            if isinstance(layer, Dense):
                gw, gb, grad = dense_backward(x, layer, grad)
                grads = [gw, gb] + grads
            elif isinstance(layer, BatchNorm):
                gg, gbeta, grad = batchnorm_backward(x, layer, grad, mode)
                grads = [gg, gbeta] + grads
            else:
                grad = activation_backward(layer.kind, x, grad)
        return grad, grads

    def copy(self) -> "Stack":
        return Stack(copy.deepcopy(self.layers))

    def astype(self, dtype) -> "Stack":
        out = self.copy()
        for layer in out.layers:
            for name in ("weight", "bias", "gamma", "beta", "running_mean", "running_var"):
                if hasattr(layer, name):
                    setattr(layer, name, getattr(layer, name).astype(dtype))
        return out


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params], **kw)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> Sequence[np.ndarray]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError("params, grads and optimizer state differ in length")
    state.step_count += 1
    t = state.step_count
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    step = state.lr / c1
    root_c2 = np.sqrt(c2)
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * np.square(g)
        if state.lr == 0:
            continue
        denom = np.sqrt(v)
        denom /= root_c2
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= step
        p -= denom.astype(p.dtype, copy=False)
    return params


# -- gradient checking ---------------------------------------------------------

@dataclass
class GradCheckReport:
    rel_errors: list[float]
    tol: float
    checked_entries: int = 0
    max_abs_error: float = 0.0
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.max_rel_error <= self.tol

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_errors, default=0.0)


def grad_check(loss_fn: Callable[[], float], grad_fn: Callable[[], Sequence[np.ndarray]],
               params: Sequence[np.ndarray], h: float = 1e-3, tol: float = 1e-3,
               max_entries: int | None = None, rng: Rng | None = None,
               floor: float = 1e-8) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn`` evaluates the scalar loss from the current (in-place mutated)
    ``params``; ``grad_fn`` returns analytic gradients aligned with them.
    The relative error for each parameter tensor is
    ``|a - n| / max(|a|, |n|, floor)`` in the 2-norm over checked entries, so
    tiny individual entries do not dominate and identically-zero gradients
    (e.g. a bias feeding batch norm) are not scored on rounding noise. With
    ``max_entries`` a random subset of each tensor is probed.
    """
    analytic = [np.array(g, dtype=np.float64) for g in grad_fn()]
    rel_errors, total, max_abs = [], 0, 0.0
    for p, a in zip(params, analytic):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or Rng(0)).permutation(flat.size)[:max_entries]
        num = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn()
            flat[i] = orig - h
            fm = loss_fn()
            flat[i] = orig
            num[j] = (fp - fm) / (2 * h)
        an = a.reshape(-1)[idx]
        diff = np.linalg.norm(an - num)
        scale = max(np.linalg.norm(an), np.linalg.norm(num), floor)
        rel_errors.append(float(diff / scale))
        max_abs = max(max_abs, float(np.max(np.abs(an - num), initial=0.0)))
        total += idx.size
    return GradCheckReport(rel_errors, tol, total, max_abs)
