"""Convolutional GAN with optional auxiliary context classifiers (ACGAN).

The vanilla baseline shares the architecture and skips the auxiliary
binary cross-entropy terms.
"""

from __future__ import annotations

import numpy as np

from ..numerics import (
    Activation, BatchNorm1d, ConfigurationError, Conv1d, ConvTranspose1d, Linear, Module,
    NonFiniteError, Rng, Sequential, loss_and_grad,
)

KERNEL, STRIDE, PAD = 4, 2, 1


class Generator(Module):
    """FC projection -> 3 transposed convolutions, each doubling the length.

    Channel widths follow ``widths`` then ``d`` (e.g. 256 -> 128 -> 64 -> 1),
    with batch norm and leaky ReLU in between and a sigmoid at the end.
    """

    def __init__(self, in_features: int, T: int, d: int, rng: Rng, widths=(256, 128, 64)):
        if T % 8:
            raise ConfigurationError(f"sequence length {T} must be divisible by 8 for three upsampling steps")
        self.T, self.d, self.widths = T, d, tuple(widths)
        self.L0 = T // 8
        w0, w1, w2 = self.widths
        self.project = Linear(in_features, w0 * self.L0, rng)
        self.bn0 = BatchNorm1d(w0)
        self.body = Sequential(
            Activation("leaky_relu"),
            ConvTranspose1d(w0, w1, rng, KERNEL, STRIDE, PAD), BatchNorm1d(w1), Activation("leaky_relu"),
            ConvTranspose1d(w1, w2, rng, KERNEL, STRIDE, PAD), BatchNorm1d(w2), Activation("leaky_relu"),
            ConvTranspose1d(w2, d, rng, KERNEL, STRIDE, PAD), Activation("sigmoid"),
        )

    def forward(self, z_star):
        """z_star (B, L, F) -> series (B, T, d) in (0, 1)."""
        B = z_star.shape[0]
        flat = z_star.reshape(B, -1)
        p, c_proj = self.project.forward(flat)
        p = p.reshape(B, self.widths[0], self.L0)
        p, c_bn = self.bn0.forward(p)
        y, c_body = self.body.forward(p)
        return y.transpose(0, 2, 1), (z_star.shape, c_proj, c_bn, c_body)

    def backward(self, dy, cache):
        shape, c_proj, c_bn, c_body = cache
        dp = self.body.backward(dy.transpose(0, 2, 1), c_body)
        dp = self.bn0.backward(dp, c_bn)
        dflat = self.project.backward(dp.reshape(dp.shape[0], -1), c_proj)
        return dflat.reshape(shape)


class Discriminator(Module):
    """3 strided convolutions (d -> 64 -> 128 -> 256), real/fake head and per-variable heads."""

    def __init__(self, T: int, d: int, cardinalities, rng: Rng, widths=(64, 128, 256)):
        if T % 8:
            raise ConfigurationError(f"sequence length {T} must be divisible by 8 for three downsampling steps")
        w0, w1, w2 = widths
        self.features = Sequential(
            Conv1d(d, w0, rng, KERNEL, STRIDE, PAD), Activation("leaky_relu"),
            Conv1d(w0, w1, rng, KERNEL, STRIDE, PAD), BatchNorm1d(w1), Activation("leaky_relu"),
            Conv1d(w1, w2, rng, KERNEL, STRIDE, PAD), BatchNorm1d(w2), Activation("leaky_relu"),
        )
        flat = w2 * (T // 8)
        self.real_head = Sequential(Linear(flat, 1, rng), Activation("sigmoid"))
        self.aux_heads = [Sequential(Linear(flat, int(c), rng), Activation("sigmoid")) for c in cardinalities]

    def forward(self, x, with_aux: bool = True):
        """x (B, T, d) -> (p_real (B,), [class probs (B, |C_i|)], cache)."""
        f, c_feat = self.features.forward(x.transpose(0, 2, 1))
        shape = f.shape
        flat = f.reshape(shape[0], -1)
        p, c_real = self.real_head.forward(flat)
        aux, c_aux = [], []
        if with_aux:
            for head in self.aux_heads:
                a, c = head.forward(flat)
                aux.append(a)
                c_aux.append(c)
        return p[:, 0], aux, (shape, c_feat, c_real, c_aux)

    def backward(self, dp, daux, cache):
        shape, c_feat, c_real, c_aux = cache
        dflat = self.real_head.backward(dp[:, None], c_real)
        for head, da, c in zip(self.aux_heads, daux, c_aux):
            dflat = dflat + head.backward(da, c)
        df = self.features.backward(dflat.reshape(shape), c_feat)
        return df.transpose(0, 2, 1)


def one_hot(codes: np.ndarray, cardinalities) -> list[np.ndarray]:
    return [np.eye(c)[codes[:, i]] for i, c in enumerate(cardinalities)]


def _aux_bce(probs, targets):
    total, grads = 0.0, []
    for p, t in zip(probs, targets):
        v, g = loss_and_grad("binary_cross_entropy", p, t)
        total += v
        grads.append(g)
    return total, grads


def _finite(name, value):
    if not np.isfinite(value):
        raise NonFiniteError(f"{name} is non-finite ({value})")
    return value


class GanModel(Module):
    def __init__(self, T: int, d: int, cardinalities, d_h: int, rng: Rng, noise_dim: int = 256,
                 latent_len: int = 1, gen_widths=(256, 128, 64), disc_widths=(64, 128, 256),
                 is_acgan: bool = True):
        self.T, self.d, self.noise_dim, self.latent_len = T, d, noise_dim, latent_len
        self.cardinalities = [int(c) for c in cardinalities]
        self.is_acgan = is_acgan
        self.generator = Generator(latent_len * (noise_dim + d_h), T, d, rng, gen_widths)
        self.discriminator = Discriminator(T, d, self.cardinalities, rng, disc_widths)

    def sample_noise(self, rng: Rng, batch: int) -> np.ndarray:
        return rng.normal((batch, self.latent_len, self.noise_dim))


def gan_generate(model: GanModel, z_star) -> np.ndarray:
    return model.generator.forward(z_star)[0]


def discriminator_loss(model: GanModel, real, fake, codes, gamma: float = 1.0,
                       backward: bool = True, acgan: bool | None = None) -> float:
    """-E log D(x) - E log(1 - D(G)) [+ gamma * sum_i (BCE_real_i + BCE_fake_i)].

    Accumulates discriminator gradients when ``backward``.
    """
    acgan = model.is_acgan if acgan is None else acgan
    disc = model.discriminator
    targets = one_hot(np.asarray(codes), model.cardinalities) if acgan else []
    total = 0.0
    for batch, label in ((real, 1.0), (fake, 0.0)):
        p, aux, cache = disc.forward(batch, with_aux=acgan)
        adv, dp = loss_and_grad("binary_cross_entropy", p, np.full_like(p, label))
        total += adv
        daux = []
        if acgan:
            a, daux = _aux_bce(aux, targets)
            total += gamma * a
            daux = [gamma * g for g in daux]
        if backward:
            disc.backward(dp, daux, cache)
    return _finite("discriminator loss", total)


def generator_adversarial_loss(model: GanModel, fake, codes, lambda_gen: float = 1.0,
                               acgan: bool | None = None):
    """-E log D(G) [+ lambda_gen * sum_i BCE_fake_i]; returns (value, d loss / d fake).

    Discriminator parameter gradients are accumulated as a side effect;
    callers zero them before the next discriminator update.
    """
    acgan = model.is_acgan if acgan is None else acgan
    disc = model.discriminator
    p, aux, cache = disc.forward(fake, with_aux=acgan)
    value, dp = loss_and_grad("binary_cross_entropy", p, np.ones_like(p))
    daux = []
    if acgan:
        a, daux = _aux_bce(aux, one_hot(np.asarray(codes), model.cardinalities))
        value += lambda_gen * a
        daux = [lambda_gen * g for g in daux]
    dfake = disc.backward(dp, daux, cache)
    return _finite("generator loss", value), dfake
