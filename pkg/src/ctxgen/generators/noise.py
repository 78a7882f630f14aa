"""Conditioned noise: the context embedding repeated over time, appended to noise."""

from __future__ import annotations

import numpy as np


def assemble_conditioned_noise(z, h) -> np.ndarray:
    """z (B, T, D_z), h (B, d_h) -> z_star (B, T, D_z + d_h)."""
    z = np.asarray(z, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if z.ndim != 3 or h.ndim != 2:
        raise ValueError(f"expected z (B, T, D) and h (B, d_h), got {z.shape} and {h.shape}")
    if z.shape[0] != h.shape[0]:
        raise ValueError(f"batch size mismatch: noise has {z.shape[0]}, context has {h.shape[0]}")
    h_rep = np.broadcast_to(h[:, None, :], (h.shape[0], z.shape[1], h.shape[1]))
    return np.concatenate([z, h_rep], axis=2)


def split_conditioned_grad(dz_star, noise_dim: int):
    """Gradient of z_star -> (dz, dh) with dh summed over the repeated axis."""
    return dz_star[:, :, :noise_dim], dz_star[:, :, noise_dim:].sum(axis=1)
