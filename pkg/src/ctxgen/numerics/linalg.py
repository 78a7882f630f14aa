"""Symmetric eigendecomposition (cyclic Jacobi) and a naive DFT."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


class ConvergenceError(RuntimeError):
    pass


def symmetric_eig(S, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues in descending
    order and eigenvectors in the columns. The input is symmetrised first.
    """
    A = np.array(S, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"symmetric_eig needs a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n == 0:
        raise ValueError("symmetric_eig of an empty matrix")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.zeros(n), V
    mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A[mask] ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300 or abs(apq) < 1e-18 * (abs(A[p, p]) + abs(A[q, q])):
                    A[p, q] = A[q, p] = 0.0
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                elif theta != 0:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                else:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J on rows/cols p, q
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        off = np.sqrt(np.sum(A[mask] ** 2))
        if off > tol * scale * 1e3:
            raise ConvergenceError(f"Jacobi did not converge after {max_sweeps} sweeps (off-diagonal {off:.3e})")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def sqrtm_psd(S):
    """Symmetric square root of a PSD matrix; negative eigenvalues clamp to 0."""
    w, V = symmetric_eig(S)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@lru_cache(maxsize=32)
def dft_matrix(T: int) -> np.ndarray:
    k = np.arange(T)
    F = np.exp(-2j * np.pi * np.outer(k, k) / T)
    F.setflags(write=False)
    return F


def dft(x, axis: int = -1) -> np.ndarray:
    """X_k = sum_t x_t exp(-2 pi i k t / T) along ``axis``; O(T^2)."""
    x = np.asarray(x)
    T = x.shape[axis]
    if T < 1:
        raise ValueError("dft of an empty axis")
    xm = np.moveaxis(x, axis, -1)
    return np.moveaxis(xm @ dft_matrix(T).T, -1, axis)


def idft(X, axis: int = -1) -> np.ndarray:
    X = np.asarray(X)
    T = X.shape[axis]
    Xm = np.moveaxis(X, axis, -1)
    return np.moveaxis(Xm @ np.conj(dft_matrix(T)).T / T, -1, axis)
