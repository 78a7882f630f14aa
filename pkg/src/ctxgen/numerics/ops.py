"""Forward/backward primitives with hand-derived gradients.

Every array is a float64 numpy array. Backward functions take the forward
inputs (or a cache) plus the upstream gradient and return gradients for
the differentiable inputs, in argument order.
"""

from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.2
BCE_CLAMP = 1e-7


class DimensionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite values in {name}")


# -- dense -----------------------------------------------------------------

def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {A.shape} @ {B.shape}")
    return A @ B


def matmul_backward(A, B, dC):
    return dC @ B.T, A.T @ dC


# -- 1-D convolution ---------------------------------------------------------

def conv_out_len(T: int, k: int, stride: int, pad: int) -> int:
    return (T + 2 * pad - k) // stride + 1


def conv_transpose_out_len(T: int, k: int, stride: int, pad: int) -> int:
    return (T - 1) * stride - 2 * pad + k


def _im2col(xp: np.ndarray, k: int, stride: int, t_out: int) -> np.ndarray:
    # (B, C, Tp) -> (B, C, k, t_out)
    idx = np.arange(k)[:, None] + stride * np.arange(t_out)[None, :]
    return xp[:, :, idx]


def _col2im(cols: np.ndarray, t_pad: int, stride: int) -> np.ndarray:
    B, C, k, t_out = cols.shape
    out = np.zeros((B, C, t_pad))
    for j in range(k):
        out[:, :, j:j + stride * (t_out - 1) + 1:stride] += cols[:, :, j, :]
    return out


def conv1d(x, W, b=None, stride=1, pad=0):
    """Cross-correlation. x (B, Cin, T), W (Cout, Cin, k) -> (B, Cout, T')."""
    B, cin, T = x.shape
    cout, cin_w, k = W.shape
    if cin != cin_w:
        raise DimensionError(f"conv1d channel mismatch: input {x.shape}, kernel {W.shape}")
    t_out = conv_out_len(T, k, stride, pad)
    if t_out < 1:
        raise ConfigurationError(f"conv1d output length {t_out} < 1 (T={T}, k={k}, stride={stride}, pad={pad})")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    cols = _im2col(xp, k, stride, t_out)
    y = np.einsum("bckt,ock->bot", cols, W, optimize=True)
    if b is not None:
        y = y + b[None, :, None]
    return y


def conv1d_backward(x, W, dy, stride=1, pad=0):
    B, cin, T = x.shape
    k = W.shape[2]
    t_out = dy.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    cols = _im2col(xp, k, stride, t_out)
    dW = np.einsum("bckt,bot->ock", cols, dy, optimize=True)
    db = dy.sum(axis=(0, 2))
    dcols = np.einsum("bot,ock->bckt", dy, W, optimize=True)
    dxp = _col2im(dcols, T + 2 * pad, stride)
    dx = dxp[:, :, pad:pad + T]
    return dx, dW, db


def conv1d_transposed(x, W, b=None, stride=1, pad=0):
    """Adjoint of conv1d w.r.t. its input. x (B, Cin, T), W (Cin, Cout, k)."""
    B, cin, T = x.shape
    cin_w, cout, k = W.shape
    if cin != cin_w:
        raise DimensionError(f"conv1d_transposed channel mismatch: input {x.shape}, kernel {W.shape}")
    t_out = conv_transpose_out_len(T, k, stride, pad)
    if t_out < 1:
        raise ConfigurationError(f"conv1d_transposed output length {t_out} < 1")
    cols = np.einsum("bct,cok->bokt", x, W, optimize=True)
    y = _col2im(cols, t_out + 2 * pad, stride)[:, :, pad:pad + t_out]
    if b is not None:
        y = y + b[None, :, None]
    return y


def conv1d_transposed_backward(x, W, dy, stride=1, pad=0):
    B, cin, T = x.shape
    k = W.shape[2]
    dyp = np.pad(dy, ((0, 0), (0, 0), (pad, pad)))
    cols = _im2col(dyp, k, stride, T)  # (B, Cout, k, T)
    dx = np.einsum("bokt,cok->bct", cols, W, optimize=True)
    dW = np.einsum("bct,bokt->cok", x, cols, optimize=True)
    db = dy.sum(axis=(0, 2))
    return dx, dW, db


# -- activations -------------------------------------------------------------

def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def activation(kind: str, x, alpha: float = LEAKY_SLOPE):
    if kind == "leaky_relu":
        return np.where(x > 0, x, alpha * x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(kind: str, x, y, dy, alpha: float = LEAKY_SLOPE):
    if kind == "leaky_relu":
        return np.where(x > 0, dy, alpha * dy)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "identity":
        return dy
    raise ValueError(f"unknown activation {kind!r}")


# -- batch norm --------------------------------------------------------------

def batchnorm1d(x, gamma, beta, running_mean, running_var, training=True,
                momentum=0.1, eps=1e-5):
    """Per-channel normalisation for (B, C) or (B, C, T) input.

    Running statistics are updated in place when training.
    Returns ``(y, cache)``.
    """
    axes = (0,) if x.ndim == 2 else (0, 2)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    if training:
        if x.shape[0] < 2:
            raise ValueError("batchnorm1d needs batch size >= 2 in training mode")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.size // x.shape[1]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / max(m - 1, 1)
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return y, (xhat, inv, gamma, axes, shape, training)


def batchnorm1d_backward(dy, cache):
    xhat, inv, gamma, axes, shape, training = cache
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma.reshape(shape)
    if not training:
        return dxhat * inv.reshape(shape), dgamma, dbeta
    m = dy.size // dy.shape[1]
    dx = (inv.reshape(shape) / m) * (
        m * dxhat
        - dxhat.sum(axis=axes).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
    )
    return dx, dgamma, dbeta


# -- embeddings --------------------------------------------------------------

def embedding_lookup(table, index, name: str = "embedding"):
    idx = np.asarray(index)
    V = table.shape[0]
    if np.any(idx < 0) or np.any(idx >= V):
        bad = int(np.ravel(idx)[np.flatnonzero((np.ravel(idx) < 0) | (np.ravel(idx) >= V))[0]])
        raise IndexError(f"{name}: index {bad} out of range for {V} categories")
    return table[idx]


def embedding_backward(table_shape, index, dout):
    grad = np.zeros(table_shape)
    np.add.at(grad, np.asarray(index), dout)
    return grad


# -- losses ------------------------------------------------------------------

def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss_and_grad(kind: str, pred, target):
    """Mean-reduced loss value and its gradient w.r.t. ``pred``.

    ``cross_entropy_from_logits`` takes logits (B, C) and integer targets
    (B,), averaging over the batch. The other kinds average over every
    element of ``pred``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    _check_finite(f"{kind} prediction", pred)
    if kind == "cross_entropy_from_logits":
        target = np.asarray(target)
        if pred.ndim != 2 or target.shape != (pred.shape[0],):
            raise DimensionError(f"cross entropy shapes {pred.shape} vs targets {target.shape}")
        logp = _log_softmax(pred)
        B = pred.shape[0]
        value = -logp[np.arange(B), target].mean()
        grad = np.exp(logp)
        grad[np.arange(B), target] -= 1.0
        return float(value), grad / B
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"{kind} shapes {pred.shape} vs {target.shape}")
    _check_finite(f"{kind} target", target)
    n = pred.size
    if kind == "binary_cross_entropy":
        if np.any(target < 0) or np.any(target > 1):
            raise ValueError("binary cross entropy targets must lie in [0, 1]")
        p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
        value = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean()
        inside = (pred > BCE_CLAMP) & (pred < 1.0 - BCE_CLAMP)
        grad = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0) / n
        return float(value), grad
    if kind == "mse":
        diff = pred - target
        return float((diff * diff).mean()), 2.0 * diff / n
    if kind == "l1":
        diff = pred - target
        return float(np.abs(diff).mean()), np.sign(diff) / n
    raise ValueError(f"unknown loss kind {kind!r}")


def loss(kind: str, pred, target) -> float:
    return loss_and_grad(kind, pred, target)[0]
