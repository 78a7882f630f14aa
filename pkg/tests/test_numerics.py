import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxgen.numerics import (
    Adam, ConfigurationError, DimensionError, NonFiniteError, Parameter, Rng, activation,
    activation_backward, adam_step, batchnorm1d, batchnorm1d_backward, conv1d, conv1d_backward,
    conv1d_transposed, conv1d_transposed_backward, dft, embedding_backward, embedding_lookup, idft,
    loss, loss_and_grad, matmul, matmul_backward, rng_draw, splitmix64, symmetric_eig,
)
from ctxgen.numerics.gradcheck import numerical_grad, relative_error


def test_matmul_examples():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), A), A)
    assert np.array_equal(matmul(A, np.ones((2, 1))), [[3.0], [7.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_backward_fd():
    rng = Rng(1)
    A, B = rng.normal((5, 4)), rng.normal((4, 3))
    G = rng.normal((5, 3))
    f = lambda: float((matmul(A, B) * G).sum())
    dA, dB = matmul_backward(A, B, G)
    assert relative_error(dA, numerical_grad(f, A)) < 1e-6
    assert relative_error(dB, numerical_grad(f, B)) < 1e-6


def test_conv1d_unit_kernel_identity_and_zero():
    x = Rng(2).normal((2, 3, 7))
    W = np.eye(3)[:, :, None]
    assert np.allclose(conv1d(x, W, stride=1, pad=0), x)
    assert np.array_equal(conv1d(np.zeros((1, 3, 8)), Rng(3).normal((2, 3, 4)), stride=2, pad=1), np.zeros((1, 2, 4)))


def test_conv1d_too_short_raises():
    with pytest.raises(ConfigurationError):
        conv1d(np.ones((1, 1, 2)), np.ones((1, 1, 5)))


@pytest.mark.parametrize("transposed", [False, True])
def test_conv_backward_fd(transposed):
    rng = Rng(4 + transposed)
    x = rng.normal((2, 3, 6))
    if transposed:
        W = rng.normal((3, 2, 4))
        fwd, bwd = conv1d_transposed, conv1d_transposed_backward
    else:
        W = rng.normal((2, 3, 4))
        fwd, bwd = conv1d, conv1d_backward
    b = rng.normal(2)
    G = rng.normal(fwd(x, W, b, 2, 1).shape)
    f = lambda: float((fwd(x, W, b, 2, 1) * G).sum())
    dx, dW, db = bwd(x, W, G, 2, 1)
    assert relative_error(dx, numerical_grad(f, x)) < 1e-6
    assert relative_error(dW, numerical_grad(f, W)) < 1e-6
    assert relative_error(db, numerical_grad(f, b)) < 1e-6


def test_conv_transposed_is_adjoint():
    rng = Rng(6)
    x, W, y = rng.normal((2, 3, 8)), rng.normal((5, 3, 4)), rng.normal((2, 5, 4))
    lhs = (conv1d(x, W, stride=2, pad=1) * y).sum()
    rhs = (x * conv1d_transposed(y, W, stride=2, pad=1)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert conv1d_transposed(y, W, stride=2, pad=1).shape == (2, 3, 8)


def test_activation_values():
    assert activation("sigmoid", np.array([0.0]))[0] == 0.5
    assert activation("leaky_relu", np.array([-1.0]), 0.2)[0] == pytest.approx(-0.2)
    with pytest.raises(ValueError):
        activation("relu6", np.zeros(1))


@pytest.mark.parametrize("kind", ["tanh", "sigmoid", "leaky_relu"])
def test_activation_backward_fd(kind):
    x = Rng(7).normal(20) + 0.05  # keep clear of the leaky kink
    G = Rng(8).normal(20)
    f = lambda: float((activation(kind, x) * G).sum())
    y = activation(kind, x)
    assert relative_error(activation_backward(kind, x, y, G), numerical_grad(f, x)) < 1e-6


def test_batchnorm_constant_and_identity():
    x = np.full((4, 2, 3), 5.0)
    y, _ = batchnorm1d(x, np.ones(2), np.array([0.3, -1.0]), np.zeros(2), np.ones(2))
    assert np.allclose(y[:, 0], 0.3) and np.allclose(y[:, 1], -1.0)
    z = Rng(9).normal((64, 3))
    z = (z - z.mean(0)) / z.std(0)
    y, _ = batchnorm1d(z, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), eps=0.0)
    assert np.max(np.abs(y - z)) < 1e-6


def test_batchnorm_batch_of_one_rejected():
    with pytest.raises(ValueError):
        batchnorm1d(np.ones((1, 2)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))


@pytest.mark.parametrize("shape", [(5, 3), (4, 2, 6)])
def test_batchnorm_backward_fd(shape):
    rng = Rng(10)
    x, g, b = rng.normal(shape), rng.normal(shape[1]), rng.normal(shape[1])
    G = rng.normal(shape)

    def f():
        return float((batchnorm1d(x, g, b, np.zeros(shape[1]), np.ones(shape[1]))[0] * G).sum())

    _, cache = batchnorm1d(x, g, b, np.zeros(shape[1]), np.ones(shape[1]))
    dx, dg, db = batchnorm1d_backward(G, cache)
    assert relative_error(dx, numerical_grad(f, x)) < 1e-5
    assert relative_error(dg, numerical_grad(f, g)) < 1e-5
    assert relative_error(db, numerical_grad(f, b)) < 1e-5


def test_embedding_lookup_and_errors():
    assert np.array_equal(embedding_lookup(np.eye(3), 1), [0.0, 1.0, 0.0])
    with pytest.raises(IndexError, match="location.*3 categories"):
        embedding_lookup(np.eye(3), 3, "location")


def test_embedding_repeated_index_accumulates():
    table = Rng(11).normal((4, 2))
    idx = np.array([1, 1, 3])
    G = Rng(12).normal((3, 2))
    f = lambda: float((embedding_lookup(table, idx) * G).sum())
    grad = embedding_backward(table.shape, idx, G)
    assert np.allclose(grad[1], G[0] + G[1])
    assert relative_error(grad, numerical_grad(f, table)) < 1e-6


def test_loss_values():
    assert loss("cross_entropy_from_logits", np.zeros((3, 5)), np.array([0, 2, 4])) == pytest.approx(np.log(5))
    x = Rng(13).normal((3, 4))
    assert loss("mse", x, x) == 0.0
    with pytest.raises(NonFiniteError):
        loss("mse", np.array([np.nan]), np.array([0.0]))


@pytest.mark.parametrize("kind", ["cross_entropy_from_logits", "binary_cross_entropy", "mse", "l1"])
def test_loss_backward_fd(kind):
    rng = Rng(14)
    if kind == "cross_entropy_from_logits":
        pred, target = rng.normal((6, 4)), rng.integers(4, 6)
    elif kind == "binary_cross_entropy":
        pred, target = 0.1 + 0.8 * rng.uniform((6, 4)), rng.uniform((6, 4))
    else:
        pred, target = rng.normal((6, 4)), rng.normal((6, 4))
    _, g = loss_and_grad(kind, pred, target)
    assert relative_error(g, numerical_grad(lambda: loss(kind, pred, target), pred)) < 1e-6


def test_adam_first_step_and_zero_grad():
    p = Parameter(np.zeros(5))
    p.grad[...] = 1.0
    adam_step([p], lr=0.01)
    assert np.all(np.abs(p.value + 0.01) < 1e-6 * 0.01)
    assert np.all(p.grad == 0.0)
    q = Parameter(np.arange(3.0))
    adam_step([q], lr=0.1)
    assert np.array_equal(q.value, np.arange(3.0))


def test_adam_descends_quadratic():
    w = Parameter(np.array([1.0]))
    opt = Adam([w], lr=0.1)
    for _ in range(100):
        w.grad[...] = 2.0 * w.value
        opt.step()
    assert abs(w.value[0]) < 0.1


def test_adam_rejects_nonfinite_gradient():
    p = Parameter(np.zeros(2), "encoder.weight")
    p.grad[0] = np.inf
    with pytest.raises(NonFiniteError, match="encoder.weight"):
        adam_step([p], 0.1)


def test_symmetric_eig_examples():
    w, V = symmetric_eig(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(w, [3.0, 2.0, 1.0])
    w, _ = symmetric_eig(np.eye(4))
    assert np.allclose(w, 1.0)
    with pytest.raises(ValueError):
        symmetric_eig(np.zeros((0, 0)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32))
def test_symmetric_eig_reconstruction(n, seed):
    A = Rng(seed).normal((n, n))
    S = A + A.T
    w, V = symmetric_eig(S)
    norm = max(np.linalg.norm(S), 1.0)
    assert np.linalg.norm(V @ np.diag(w) @ V.T - S) < 1e-9 * norm
    assert np.linalg.norm(V.T @ V - np.eye(n)) < 1e-9
    assert np.all(np.diff(w) <= 1e-12)
    assert np.max(np.abs(S @ V - V * w)) < 1e-9 * norm


def test_dft_examples():
    X = dft(np.full(8, 2.5))
    assert abs(X[0] - 20.0) < 1e-9 and np.max(np.abs(X[1:])) < 1e-9
    t = np.arange(8)
    X = dft(np.cos(2 * np.pi * 2 * t / 8))
    energy = np.abs(X) > 1e-9
    assert set(np.flatnonzero(energy)) == {2, 6}


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32))
def test_dft_parseval_and_linearity(T, seed):
    rng = Rng(seed)
    x, y = rng.normal(T), rng.normal(T)
    X = dft(x)
    assert abs((x ** 2).sum() - (np.abs(X) ** 2).sum() / T) < 1e-9 * max(1.0, (x ** 2).sum())
    assert np.max(np.abs(dft(2.0 * x - y) - (2.0 * X - dft(y)))) < 1e-9
    assert np.max(np.abs(idft(X).real - x)) < 1e-9


def test_rng_determinism_and_scalar_reference():
    a, b = Rng(42), Rng(42)
    assert np.array_equal(a.uniform(1000), b.uniform(1000))
    state, words = 42, []
    for _ in range(5):
        w, state = splitmix64(state)
        words.append(w)
    assert Rng(42).words(5).tolist() == words


def test_rng_normal_moments():
    z = Rng(123).normal(100_000)
    assert abs(z.mean()) < 0.02 and abs(z.var() - 1.0) < 0.02


def test_rng_categorical():
    assert np.all(Rng(5).categorical([1.0, 0.0, 0.0], 500) == 0)
    with pytest.raises(ValueError):
        Rng(5).categorical([0.5, 0.6])
    samples, state = rng_draw(9, "normal", 4)
    again, state2 = rng_draw(9, "normal", 4)
    assert np.array_equal(samples, again) and state == state2
