"""Layer objects over the primitives in :mod:`ops`, plus Adam.

Layers are stateless with respect to a forward pass: ``forward`` returns
``(y, cache)`` and ``backward(dy, cache)`` returns the input gradient while
accumulating parameter gradients. The same layer can therefore be applied
to several batches (real and fake, say) before any backward call.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .rng import Rng


class Parameter:
    __slots__ = ("name", "value", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, value, name: str = ""):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """Bias-corrected Adam update, then zero the gradients."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise ops.NonFiniteError(f"non-finite gradient in parameter {p.name!r}")
    for p in params:
        p.step_count += 1
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * p.grad
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * p.grad * p.grad
        m_hat = p.adam_m / (1.0 - beta1 ** p.step_count)
        v_hat = p.adam_v / (1.0 - beta2 ** p.step_count)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class Module:
    training = True

    def children(self):
        return [(k, v) for k, v in vars(self).items() if isinstance(v, Module)] + [
            (f"{k}.{i}", m)
            for k, v in vars(self).items()
            if isinstance(v, (list, tuple))
            for i, m in enumerate(v)
            if isinstance(m, Module)
        ]

    def own_parameters(self):
        return [(k, v) for k, v in vars(self).items() if isinstance(v, Parameter)]

    def own_buffers(self):
        return []

    def named_parameters(self, prefix: str = ""):
        out = [(prefix + k, p) for k, p in self.own_parameters()]
        for name, child in self.children():
            out.extend(child.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        out = [(prefix + k, b) for k, b in self.own_buffers()]
        for name, child in self.children():
            out.extend(child.named_buffers(f"{prefix}{name}."))
        return out

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.value.copy()) for k, p in self.named_parameters())
        state.update((k, b.copy()) for k, b in self.named_buffers())
        return state

    def load_state_dict(self, state) -> None:
        for k, p in self.named_parameters():
            if k not in state:
                raise KeyError(f"missing parameter {k!r} in state")
            if state[k].shape != p.value.shape:
                raise ValueError(f"shape mismatch for {k!r}: {state[k].shape} vs {p.value.shape}")
            p.value[...] = state[k]
        for k, b in self.named_buffers():
            if k not in state:
                raise KeyError(f"missing buffer {k!r} in state")
            b[...] = state[k]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())


def _fan_in_uniform(rng: Rng, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return (2.0 * rng.uniform(shape) - 1.0) * bound


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: Rng, zero_init: bool = False):
        if zero_init:
            w, b = np.zeros((n_in, n_out)), np.zeros(n_out)
        else:
            w = _fan_in_uniform(rng, (n_in, n_out), n_in)
            b = _fan_in_uniform(rng, (n_out,), n_in)
        self.weight = Parameter(w, "weight")
        self.bias = Parameter(b, "bias")

    def forward(self, x):
        return ops.matmul(x, self.weight.value) + self.bias.value, x

    def backward(self, dy, x):
        dx, dw = ops.matmul_backward(x, self.weight.value, dy)
        self.weight.grad += dw
        self.bias.grad += dy.sum(axis=0)
        return dx


class Activation(Module):
    def __init__(self, kind: str, alpha: float = ops.LEAKY_SLOPE):
        if kind not in ("leaky_relu", "sigmoid", "tanh", "identity"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind, self.alpha = kind, alpha

    def forward(self, x):
        y = ops.activation(self.kind, x, self.alpha)
        return y, (x, y)

    def backward(self, dy, cache):
        x, y = cache
        return ops.activation_backward(self.kind, x, y, dy, self.alpha)


class Conv1d(Module):
    def __init__(self, c_in, c_out, rng: Rng, kernel=4, stride=2, pad=1):
        fan_in = c_in * kernel
        self.weight = Parameter(_fan_in_uniform(rng, (c_out, c_in, kernel), fan_in), "weight")
        self.bias = Parameter(_fan_in_uniform(rng, (c_out,), fan_in), "bias")
        self.stride, self.pad = stride, pad

    def forward(self, x):
        return ops.conv1d(x, self.weight.value, self.bias.value, self.stride, self.pad), x

    def backward(self, dy, x):
        dx, dw, db = ops.conv1d_backward(x, self.weight.value, dy, self.stride, self.pad)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class ConvTranspose1d(Module):
    def __init__(self, c_in, c_out, rng: Rng, kernel=4, stride=2, pad=1):
        fan_in = c_out * kernel
        self.weight = Parameter(_fan_in_uniform(rng, (c_in, c_out, kernel), fan_in), "weight")
        self.bias = Parameter(_fan_in_uniform(rng, (c_out,), fan_in), "bias")
        self.stride, self.pad = stride, pad

    def forward(self, x):
        return ops.conv1d_transposed(x, self.weight.value, self.bias.value, self.stride, self.pad), x

    def backward(self, dy, x):
        dx, dw, db = ops.conv1d_transposed_backward(x, self.weight.value, dy, self.stride, self.pad)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class BatchNorm1d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels), "gamma")
        self.beta = Parameter(np.zeros(channels), "beta")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum, self.eps = momentum, eps

    def own_buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x):
        return ops.batchnorm1d(
            x, self.gamma.value, self.beta.value, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )

    def backward(self, dy, cache):
        dx, dg, db = ops.batchnorm1d_backward(dy, cache)
        self.gamma.grad += dg
        self.beta.grad += db
        return dx


class Embedding(Module):
    def __init__(self, n_categories: int, dim: int, rng: Rng, std: float = 0.1, name: str = "embedding"):
        self.table = Parameter(std * rng.normal((n_categories, dim)), "table")
        self.label = name

    def forward(self, index):
        return ops.embedding_lookup(self.table.value, index, self.label), index

    def backward(self, dy, index):
        self.table.grad += ops.embedding_backward(self.table.value.shape, index, dy)
        return None


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, dy, caches):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(dy, c)
        return dy


def mlp(sizes, rng: Rng, act: str = "leaky_relu", zero_last: bool = False) -> Sequential:
    """Dense stack ``sizes[0] -> ... -> sizes[-1]`` with activations between layers."""
    layers = []
    for i in range(len(sizes) - 1):
        last = i == len(sizes) - 2
        layers.append(Linear(sizes[i], sizes[i + 1], rng, zero_init=last and zero_last))
        if not last:
            layers.append(Activation(act))
    return Sequential(*layers)
