"""Context-grouped normalisation and the network that predicts its statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .numerics import Adam, Embedding, Module, NonFiniteError, Rng, mlp, softplus, softplus_inverse
from .numerics import ops

DELTA = 1e-5


@dataclass
class NormStats:
    mu: np.ndarray
    sigma: np.ndarray
    z_min: np.ndarray
    z_max: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.sigma, self.z_min, self.z_max])

    @classmethod
    def from_vector(cls, v) -> "NormStats":
        mu, sigma, z_min, z_max = np.split(np.asarray(v, dtype=np.float64), 4)
        return cls(mu, sigma, z_min, z_max)


def stats_of(series: np.ndarray, delta: float = DELTA) -> NormStats:
    """Per-channel statistics of a group of series shaped (n, T, d)."""
    flat = series.reshape(-1, series.shape[-1])
    mu = flat.mean(axis=0)
    sigma = flat.std(axis=0)
    zbar = (flat - mu) / (sigma + delta)
    return NormStats(mu, sigma, zbar.min(axis=0), zbar.max(axis=0))


def compute_group_stats(dataset: Dataset, delta: float = DELTA) -> dict[tuple, NormStats]:
    if len(dataset) == 0:
        raise ValueError("cannot compute group statistics of an empty dataset")
    groups: dict[tuple, list[int]] = {}
    for i, key in enumerate(dataset.combination_keys()):
        groups.setdefault(key, []).append(i)
    return {key: stats_of(dataset.series[idx], delta) for key, idx in sorted(groups.items())}


def normalize(x, stats: NormStats, delta: float = DELTA):
    zbar = (x - stats.mu) / (stats.sigma + delta)
    return (zbar - stats.z_min) / (stats.z_max - stats.z_min + delta)


def denormalize(z, stats: NormStats, delta: float = DELTA):
    # exact inverse of normalize for the same stats and delta
    return (z * (stats.z_max - stats.z_min + delta) + stats.z_min) * (stats.sigma + delta) + stats.mu


def normalize_batch(x, stat_vectors, delta: float = DELTA):
    """x (n, T, d); stat_vectors (n, 4 d) rows laid out as NormStats.as_vector."""
    mu, sigma, zmin, zmax = (a[:, None, :] for a in np.split(stat_vectors, 4, axis=1))
    return ((x - mu) / (sigma + delta) - zmin) / (zmax - zmin + delta)


def denormalize_batch(z, stat_vectors, delta: float = DELTA):
    mu, sigma, zmin, zmax = (a[:, None, :] for a in np.split(stat_vectors, 4, axis=1))
    return (z * (zmax - zmin + delta) + zmin) * (sigma + delta) + mu


class NormalizerModel(Module):
    """Embeddings -> shallow MLP -> (mu, sigma, z_min, z_max) per channel.

    The network emits four standardised blocks ``u``. They are mapped to
    statistics through ``pre = u * scale + offset`` and a head that keeps
    ``sigma = softplus(pre_sigma) >= 0`` and
    ``z_max = z_min + softplus(pre_gap) >= z_min``.
    """

    def __init__(self, cardinalities, d: int, rng: Rng, embed_dim: int = 8, hidden: int = 64,
                 delta: float = DELTA):
        self.cardinalities = list(cardinalities)
        self.d = d
        self.delta = delta
        self.embeddings = [Embedding(c, embed_dim, rng, name=f"normalizer variable {i}")
                           for i, c in enumerate(self.cardinalities)]
        self.net = mlp([embed_dim * len(self.cardinalities), hidden, hidden, 4 * d], rng)
        self.scale = np.ones(4 * d)
        self.offset = np.zeros(4 * d)

    def own_buffers(self):
        return [("scale", self.scale), ("offset", self.offset)]

    def forward(self, codes):
        codes = np.atleast_2d(np.asarray(codes))
        if codes.shape[1] != len(self.cardinalities):
            raise ValueError(f"expected {len(self.cardinalities)} context codes, got {codes.shape[1]}")
        embs, caches = [], []
        for i, emb in enumerate(self.embeddings):
            e, c = emb.forward(codes[:, i])
            embs.append(e)
            caches.append(c)
        u, net_cache = self.net.forward(np.concatenate(embs, axis=1))
        pre = u * self.scale + self.offset
        d = self.d
        mu, s_raw, zmin, g_raw = pre[:, :d], pre[:, d:2 * d], pre[:, 2 * d:3 * d], pre[:, 3 * d:]
        stats = np.concatenate([mu, softplus(s_raw), zmin, zmin + softplus(g_raw)], axis=1)
        return stats, (codes, caches, net_cache, s_raw, g_raw, embs[0].shape[1])

    def backward(self, dstats, cache):
        codes, caches, net_cache, s_raw, g_raw, width = cache
        d = self.d
        dmu, dsig, dzmin, dzmax = (dstats[:, i * d:(i + 1) * d] for i in range(4))
        dpre = np.concatenate(
            [dmu, dsig * ops.sigmoid(s_raw), dzmin + dzmax, dzmax * ops.sigmoid(g_raw)], axis=1
        )
        demb = self.net.backward(dpre * self.scale, net_cache)
        for i, emb in enumerate(self.embeddings):
            emb.backward(demb[:, i * width:(i + 1) * width], caches[i])

    def fit_standardization(self, targets: np.ndarray) -> np.ndarray:
        """Set scale/offset so a zero network output reproduces the target means."""
        d = self.d
        mu, sig, zmin, zmax = (targets[:, i * d:(i + 1) * d] for i in range(4))
        gap = zmax - zmin
        blocks = [mu, sig, zmin, gap]
        floors = [None, 1e-8, None, 1e-8]
        offset, scale = [], []
        for b, fl in zip(blocks, floors):
            m = b.mean(axis=0)
            s = b.std(axis=0)
            offset.append(m if fl is None else softplus_inverse(np.maximum(m, fl)))
            scale.append(np.where(s > 1e-12, s, 1.0))
        self.offset[...] = np.concatenate(offset)
        # scale the raw-sigma/gap blocks by the stat spread divided by softplus' slope at the offset
        sc = np.concatenate(scale)
        slope = np.concatenate([np.ones(d), ops.sigmoid(self.offset[d:2 * d]),
                                np.ones(d), ops.sigmoid(self.offset[3 * d:])])
        self.scale[...] = sc / slope
        # loss weights: per-stat spread, z_max shares the gap's spread
        return np.concatenate([scale[0], scale[1], scale[2], scale[3]])

    def predict(self, codes) -> np.ndarray:
        """Stat vectors (n, 4 d) for integer codes (n, N)."""
        codes = np.atleast_2d(np.asarray(codes))
        for i, c in enumerate(self.cardinalities):
            bad = (codes[:, i] < 0) | (codes[:, i] >= c)
            if np.any(bad):
                raise IndexError(f"context code {int(codes[bad, i][0])} out of range for variable {i} ({c} categories)")
        return self.forward(codes)[0]


def predict_stats(model: NormalizerModel, codes) -> NormStats:
    return NormStats.from_vector(model.predict(np.asarray(codes)[None, :])[0])


def stats_training_set(group_stats: dict[tuple, NormStats]):
    keys = list(group_stats)
    codes = np.array(keys, dtype=np.int64)
    targets = np.stack([group_stats[k].as_vector() for k in keys])
    return codes, targets


def normalizer_loss(model: NormalizerModel, codes, targets, weights):
    """Summed per-stat MSE in standardised units; returns (value, cache, dstats)."""
    stats, cache = model.forward(codes)
    diff = (stats - targets) / weights
    n = codes.shape[0]
    value = float((diff * diff).sum() / n)
    dstats = 2.0 * diff / weights / n
    return value, cache, dstats


def train_normalizer(codes, targets, cardinalities, d: int, seed: int = 0, steps: int = 2000,
                     lr: float = 3e-3, embed_dim: int = 8, hidden: int = 64,
                     delta: float = DELTA):
    """Fit a :class:`NormalizerModel` on (codes, stat vector) pairs by full-batch Adam.

    Returns ``(model, losses)``.
    """
    codes = np.asarray(codes, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    if codes.shape[0] < 1 or targets.shape != (codes.shape[0], 4 * d):
        raise ValueError("normalizer training needs at least one (codes, stats) pair with 4*d targets")
    model = NormalizerModel(cardinalities, d, Rng(seed), embed_dim, hidden, delta)
    weights = model.fit_standardization(targets)
    opt = Adam(model.parameters(), lr)
    losses = []
    for step in range(steps):
        value, cache, dstats = normalizer_loss(model, codes, targets, weights)
        if not np.isfinite(value):
            raise NonFiniteError(f"normalizer loss became non-finite at step {step}")
        losses.append(value)
        model.backward(dstats, cache)
        opt.step()
    return model, np.array(losses)
