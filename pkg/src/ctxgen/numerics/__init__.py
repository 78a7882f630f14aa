"""Deterministic float64 numerics: primitives, layers, Adam, Jacobi, DFT, PRNG."""

from .layers import (
    Activation, Adam, BatchNorm1d, Conv1d, ConvTranspose1d, Embedding, Linear,
    Module, Parameter, Sequential, adam_step, mlp,
)
from .linalg import ConvergenceError, dft, idft, sqrtm_psd, symmetric_eig
from .ops import (
    ConfigurationError, DimensionError, NonFiniteError, activation, activation_backward,
    batchnorm1d, batchnorm1d_backward, conv1d, conv1d_backward, conv1d_transposed,
    conv1d_transposed_backward, embedding_backward, embedding_lookup, loss, loss_and_grad,
    matmul, matmul_backward, sigmoid, softplus, softplus_inverse,
)
from .rng import Rng, rng_draw, splitmix64

__all__ = [name for name in dir() if not name.startswith("_")]
