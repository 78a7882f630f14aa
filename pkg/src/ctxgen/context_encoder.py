"""Context encoder: per-variable embeddings, compression MLP and reconstruction heads."""

from __future__ import annotations

import numpy as np

from .numerics import Embedding, Module, Rng, loss_and_grad, mlp


class ContextEncoder(Module):
    """Maps integer context codes (B, N) to a compact embedding h (B, d_h).

    Each variable has its own table ``e_i`` (|C_i| x D); the N looked-up rows
    are concatenated (N*D) and compressed by an MLP. One head per variable
    maps h back to |C_i| logits for the reconstruction loss.
    """

    def __init__(self, cardinalities, rng: Rng, embed_dim: int = 16, d_h: int = 16,
                 hidden=(128, 128), head_hidden: int = 64, zero_heads: bool = False):
        self.cardinalities = [int(c) for c in cardinalities]
        n_vars = len(self.cardinalities)
        if d_h >= n_vars * embed_dim:
            raise ValueError(f"context dimension {d_h} must be below N*D = {n_vars * embed_dim}")
        self.embed_dim, self.d_h = embed_dim, d_h
        self.embeddings = [Embedding(c, embed_dim, rng, std=0.1, name=f"context variable {i}")
                           for i, c in enumerate(self.cardinalities)]
        self.compress = mlp([n_vars * embed_dim, *hidden, d_h], rng)
        self.heads = [mlp([d_h, head_hidden, c], rng, zero_last=zero_heads) for c in self.cardinalities]

    @property
    def n_vars(self) -> int:
        return len(self.cardinalities)

    def _check(self, codes) -> np.ndarray:
        codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
        if codes.shape[1] != self.n_vars:
            raise ValueError(f"expected {self.n_vars} context codes, got {codes.shape[1]}")
        return codes

    def flat_embedding(self, codes):
        codes = self._check(codes)
        parts, caches = [], []
        for i, emb in enumerate(self.embeddings):
            e, c = emb.forward(codes[:, i])
            parts.append(e)
            caches.append(c)
        return np.concatenate(parts, axis=1), caches

    def encode(self, codes):
        """Returns ``(h, cache)``."""
        eps, emb_caches = self.flat_embedding(codes)
        h, mlp_cache = self.compress.forward(eps)
        return h, (emb_caches, mlp_cache)

    def encode_backward(self, dh, cache) -> None:
        emb_caches, mlp_cache = cache
        deps = self.compress.backward(dh, mlp_cache)
        D = self.embed_dim
        for i, emb in enumerate(self.embeddings):
            emb.backward(deps[:, i * D:(i + 1) * D], emb_caches[i])

    def reconstruct(self, h):
        """Per-variable logits; returns ``(logits_list, caches)``."""
        outs = [head.forward(h) for head in self.heads]
        return [o for o, _ in outs], [c for _, c in outs]

    def reconstruct_backward(self, dlogits, caches) -> np.ndarray:
        dh = 0.0
        for head, dl, c in zip(self.heads, dlogits, caches):
            dh = dh + head.backward(dl, c)
        return dh

    def embed(self, codes) -> np.ndarray:
        return self.encode(codes)[0]


def aux_loss(logits, codes):
    """Sum over variables of the batch-mean cross entropy.

    Returns ``(value, dlogits_list)``.
    """
    codes = np.atleast_2d(np.asarray(codes))
    if len(logits) != codes.shape[1]:
        raise ValueError(f"{len(logits)} logit blocks for {codes.shape[1]} context variables")
    total, grads = 0.0, []
    for i, lg in enumerate(logits):
        v, g = loss_and_grad("cross_entropy_from_logits", lg, codes[:, i])
        total += v
        grads.append(g)
    return total, grads


def reconstruction_accuracy(encoder: ContextEncoder, codes) -> float:
    """Fraction of (context, variable) pairs whose head argmax equals the code."""
    codes = np.atleast_2d(np.asarray(codes))
    h = encoder.embed(codes)
    logits, _ = encoder.reconstruct(h)
    hits = np.stack([lg.argmax(axis=1) == codes[:, i] for i, lg in enumerate(logits)], axis=1)
    return float(hits.mean())


def encode_context(encoder: ContextEncoder, codes) -> np.ndarray:
    """h for a single context code vector."""
    return encoder.embed(np.asarray(codes)[None, :])[0]
