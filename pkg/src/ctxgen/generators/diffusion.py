"""Conditional denoising diffusion with interpretable trend and Fourier heads.

The denoiser predicts the clean sample directly. Its output is the sum of

* a polynomial trend ``C @ coef`` with ``C = [1, c, ..., c^p]`` over the
  normalised time axis ``c in [0, 1]``,
* a seasonal part: the DFT of a learned representation, reduced to its
  top-K non-DC frequency bins and synthesised back as cosines,
* an unconstrained residual,
* a fixed skip term ``c_skip(t) * x_t``: the linear least-squares estimate
  of x0 from x_t for data of variance ``skip_var``, so the network only
  has to learn the correction to it.

Model-space samples live in [-1, 1]; the public API takes and returns
series in the normalised [0, 1] space.
"""

from __future__ import annotations

import math

import numpy as np

from ..numerics import (
    Activation, ConfigurationError, Linear, Module, NonFiniteError, Rng, Sequential, dft, idft,
)
from ..numerics.linalg import dft_matrix
from .noise import assemble_conditioned_noise, split_conditioned_grad


def cosine_beta_schedule(T_steps: int, s: float = 0.008):
    """Betas and cumulative alphas; index ``t - 1`` holds step ``t``."""
    if T_steps < 2:
        raise ValueError("cosine schedule needs at least 2 steps")
    t = np.arange(T_steps + 1, dtype=np.float64)
    f = np.cos(((t / T_steps) + s) / (1.0 + s) * math.pi / 2.0) ** 2
    alphas_bar = f / f[0]
    betas = np.clip(1.0 - alphas_bar[1:] / alphas_bar[:-1], 1e-8, 0.999)
    return betas, np.cumprod(1.0 - betas)


def forward_diffuse(x0, t, noise, alphas_bar):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise, t in 1..T_steps (scalar or (B,))."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > len(alphas_bar)):
        raise ValueError(f"diffusion step out of range 1..{len(alphas_bar)}")
    ab = alphas_bar[t - 1]
    if ab.ndim:
        ab = ab.reshape((-1,) + (1,) * (np.ndim(x0) - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def timestep_embedding(t, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def polynomial_basis(T: int, degree: int) -> np.ndarray:
    c = np.arange(T) / max(T - 1, 1)
    return np.stack([c ** i for i in range(degree + 1)], axis=1)


def top_k_mask(w, k: int) -> np.ndarray:
    """Boolean (B, T, d) mask of the k largest-amplitude bins in 1..T//2 plus mirrors."""
    B, T, d = w.shape
    if k > T // 2:
        raise ConfigurationError(f"top-K {k} exceeds the {T // 2} available frequency bins")
    X = dft(w, axis=1)
    cand = np.arange(1, T // 2 + 1)
    amp = np.abs(X[:, cand, :])
    order = np.argsort(-amp, axis=1, kind="stable")[:, :k, :]
    chosen = cand[order]  # (B, k, d)
    mask = np.zeros((B, T, d), dtype=bool)
    bi = np.arange(B)[:, None, None]
    ci = np.arange(d)[None, None, :]
    mask[bi, chosen, ci] = True
    mask[bi, (T - chosen) % T, ci] = True
    return mask


def fourier_synthesis(w, mask) -> np.ndarray:
    """Real projection of ``w`` onto the masked frequency bins along axis 1."""
    return np.real(idft(mask * dft(w, axis=1), axis=1))


def fourier_components(w, k: int):
    """Amplitudes, phases and frequencies of the selected bins: (freq, amp, phase), each (B, k, d).

    ``sum_k amp cos(2 pi freq tau + phase)`` with ``tau = 0..T-1`` equals
    :func:`fourier_synthesis` for the same selection.
    """
    B, T, d = w.shape
    X = dft(w, axis=1)
    cand = np.arange(1, T // 2 + 1)
    order = np.argsort(-np.abs(X[:, cand, :]), axis=1, kind="stable")[:, :k, :]
    freq = cand[order]
    Xk = np.take_along_axis(X, freq, axis=1)
    scale = np.where(2 * freq == T, 1.0, 2.0) / T
    return freq / T, scale * np.abs(Xk), np.angle(Xk)


class DiffusionModel(Module):
    def __init__(self, T: int, d: int, d_h: int, rng: Rng, T_steps: int = 100, hidden: int = 128,
                 n_blocks: int = 2, t_dim: int = 32, trend_degree: int = 3, top_k: int = 3,
                 lambda1: float = 1.0, lambda2: float = 0.1, loss_type: str = "l1",
                 ema_decay: float = 0.99, skip_var: float = 0.25):
        if top_k > T // 2:
            raise ConfigurationError(f"top-K {top_k} exceeds the {T // 2} available frequency bins")
        if loss_type not in ("l1", "l2"):
            raise ConfigurationError(f"unknown loss type {loss_type!r}")
        if lambda1 < 0 or lambda2 < 0:
            raise ConfigurationError("loss weights must be non-negative")
        self.T, self.d, self.d_h = T, d, d_h
        self.T_steps, self.t_dim = T_steps, t_dim
        self.trend_degree, self.top_k = trend_degree, top_k
        self.lambda1, self.lambda2, self.loss_type = lambda1, lambda2, loss_type
        self.ema_decay = ema_decay
        self.betas, self.alphas_bar = cosine_beta_schedule(T_steps)
        ab = self.alphas_bar
        self.skip_var = skip_var
        self.c_skip = np.sqrt(ab) * skip_var / (ab * skip_var + 1.0 - ab)
        self.basis = polynomial_basis(T, trend_degree)
        n_in = T * (d + d_h) + t_dim
        self.stem = Sequential(Linear(n_in, hidden, rng), Activation("leaky_relu"))
        self.blocks = [Sequential(Linear(hidden, hidden, rng), Activation("leaky_relu"),
                                  Linear(hidden, hidden, rng), Activation("leaky_relu"))
                       for _ in range(n_blocks)]
        self.trend_head = Linear(hidden, (trend_degree + 1) * d, rng, zero_init=True)
        self.season_head = Linear(hidden, T * d, rng, zero_init=True)
        self.residual_head = Linear(hidden, T * d, rng, zero_init=True)
        self.ema = None

    # -- denoiser ------------------------------------------------------------

    def denoise(self, x_t, t, h):
        """Model-space x_t (B, T, d) -> (x0_hat, parts, cache)."""
        B = x_t.shape[0]
        z_star = assemble_conditioned_noise(x_t, h)
        inp = np.concatenate([z_star.reshape(B, -1), timestep_embedding(t, self.t_dim)], axis=1)
        r, c_stem = self.stem.forward(inp)
        c_blocks = []
        for block in self.blocks:
            dr, c = block.forward(r)
            r = r + dr
            c_blocks.append(c)
        coef, c_tr = self.trend_head.forward(r)
        coef = coef.reshape(B, self.trend_degree + 1, self.d)
        trend = np.einsum("tp,bpd->btd", self.basis, coef)
        w, c_se = self.season_head.forward(r)
        w = w.reshape(B, self.T, self.d)
        mask = top_k_mask(w, self.top_k)
        season = fourier_synthesis(w, mask)
        resid, c_re = self.residual_head.forward(r)
        resid = resid.reshape(B, self.T, self.d)
        skip = self.c_skip[np.asarray(t) - 1][:, None, None] * x_t
        parts = {"trend": trend, "season": season, "residual": resid, "skip": skip}
        cache = (z_star.shape, c_stem, c_blocks, c_tr, c_se, c_re, mask)
        return trend + season + resid + skip, parts, cache

    def denoise_backward(self, dx0, cache) -> np.ndarray:
        """Accumulates parameter gradients; returns d loss / d h."""
        shape, c_stem, c_blocks, c_tr, c_se, c_re, mask = cache
        B = dx0.shape[0]
        dcoef = np.einsum("tp,btd->bpd", self.basis, dx0).reshape(B, -1)
        dw = fourier_synthesis(dx0, mask)  # the masked projection is symmetric
        dr = self.trend_head.backward(dcoef, c_tr)
        dr = dr + self.season_head.backward(dw.reshape(B, -1), c_se)
        dr = dr + self.residual_head.backward(dx0.reshape(B, -1), c_re)
        for block, c in zip(reversed(self.blocks), reversed(c_blocks)):
            dr = dr + block.backward(dr, c)
        dinp = self.stem.backward(dr, c_stem)
        n_star = shape[1] * shape[2]
        dz_star = dinp[:, :n_star].reshape(shape)
        _, dh = split_conditioned_grad(dz_star, self.d)
        return dh

    # -- EMA -----------------------------------------------------------------

    def init_ema(self) -> None:
        self.ema = {k: p.value.copy() for k, p in self.named_parameters()}

    def update_ema(self) -> None:
        if self.ema is None:
            self.init_ema()
            return
        a = self.ema_decay
        for k, p in self.named_parameters():
            e = self.ema[k]
            e *= a
            e += (1.0 - a) * p.value

    def swap_ema(self) -> None:
        """Exchange live and EMA weights (call twice to restore)."""
        if self.ema is None:
            return
        for k, p in self.named_parameters():
            tmp = p.value.copy()
            p.value[...] = self.ema[k]
            self.ema[k] = tmp


def to_model_space(x):
    return 2.0 * x - 1.0


def from_model_space(y):
    return 0.5 * (y + 1.0)


def denoiser_forward(model: DiffusionModel, x_t, t, h):
    """x0 estimate with its trend/season/residual parts (model space)."""
    t = np.broadcast_to(np.asarray(t), (x_t.shape[0],))
    x0, parts, _ = model.denoise(x_t, t, h)
    return x0, parts


def _freq_terms(diff, T):
    F = dft_matrix(T)
    C, S = F.real / T, F.imag / T  # forward-normalised real/imag DFT operators
    re = np.einsum("kt,btd->bkd", C, diff)
    im = np.einsum("kt,btd->bkd", S, diff)
    return C, S, re, im


def diffusion_loss(model: DiffusionModel, x0, h, t, noise, backward: bool = True):
    """Weighted time + frequency reconstruction loss (w_t = 1).

    ``x0`` in [0, 1]; ``t`` (B,) integer steps; ``noise`` (B, T, d).
    Returns ``(value, dh)``; dh is None without backward.
    """
    y0 = to_model_space(np.asarray(x0, dtype=np.float64))
    x_t = forward_diffuse(y0, t, noise, model.alphas_bar)
    y_hat, _, cache = model.denoise(x_t, np.asarray(t), h)
    diff = y_hat - y0
    n = diff.size
    C, S, re, im = _freq_terms(diff, model.T)
    if model.loss_type == "l1":
        time_v = np.abs(diff).mean()
        freq_v = np.abs(re).mean() + np.abs(im).mean()
        g_time = np.sign(diff) / n
        g_freq = (np.einsum("kt,bkd->btd", C, np.sign(re)) + np.einsum("kt,bkd->btd", S, np.sign(im))) / n
    else:
        time_v = (diff * diff).mean()
        freq_v = (re * re).mean() + (im * im).mean()
        g_time = 2.0 * diff / n
        g_freq = 2.0 * (np.einsum("kt,bkd->btd", C, re) + np.einsum("kt,bkd->btd", S, im)) / n
    value = float(model.lambda1 * time_v + model.lambda2 * freq_v)
    if not np.isfinite(value):
        raise NonFiniteError(f"diffusion loss is non-finite ({value})")
    if not backward:
        return value, None
    dh = model.denoise_backward(model.lambda1 * g_time + model.lambda2 * g_freq, cache)
    return value, dh


def diffusion_sample(model: DiffusionModel, h, seed: int = 0, rng: Rng | None = None) -> np.ndarray:
    """Ancestral sampling with the x0-parameterised posterior mean; returns (n, T, d) in [0, 1]."""
    rng = Rng(seed) if rng is None else rng
    h = np.atleast_2d(h)
    n = h.shape[0]
    betas, ab = model.betas, model.alphas_bar
    ab_prev = np.concatenate([[1.0], ab[:-1]])
    x = rng.normal((n, model.T, model.d))
    model.swap_ema()
    try:
        for t in range(model.T_steps, 0, -1):
            i = t - 1
            y0, _, _ = model.denoise(x, np.full(n, t), h)
            y0 = np.clip(y0, -1.0, 1.0)
            c0 = math.sqrt(ab_prev[i]) * betas[i] / (1.0 - ab[i])
            ct = math.sqrt(1.0 - betas[i]) * (1.0 - ab_prev[i]) / (1.0 - ab[i])
            mean = c0 * y0 + ct * x
            if t > 1:
                var = betas[i] * (1.0 - ab_prev[i]) / (1.0 - ab[i])
                x = mean + math.sqrt(var) * rng.normal(x.shape)
            else:
                x = mean
    finally:
        model.swap_ema()
    return np.clip(from_model_space(x), 0.0, 1.0)
