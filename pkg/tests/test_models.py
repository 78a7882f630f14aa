import numpy as np
import pytest

from ctxgen.context_encoder import ContextEncoder, aux_loss, encode_context, reconstruction_accuracy
from ctxgen.generators import (
    DiffusionModel, GanModel, assemble_conditioned_noise, cosine_beta_schedule, diffusion_loss,
    diffusion_sample, discriminator_loss, forward_diffuse, fourier_components, fourier_synthesis,
    generator_adversarial_loss, polynomial_basis, split_conditioned_grad, top_k_mask,
)
from ctxgen.numerics import Adam, ConfigurationError, Rng
from ctxgen.numerics.gradcheck import numerical_grad, relative_error

CARDS = [3, 2, 4]


def codes_for(B, rng):
    return np.stack([rng.integers(c, B) for c in CARDS], axis=1)


def check_params(module, f, tol=1e-5, max_params=None):
    """FD check of every parameter gradient of ``module`` against scalar ``f``."""
    for k, p in module.named_parameters()[:max_params]:
        num = numerical_grad(f, p.value)
        assert relative_error(p.grad, num, floor=1e-5) < tol, k


# -- context encoder ---------------------------------------------------------------

def test_encoder_shapes_and_distinct_contexts():
    enc = ContextEncoder(CARDS, Rng(0), embed_dim=4, d_h=5, hidden=(16,), head_hidden=8)
    codes = np.array([[0, 0, 0], [2, 1, 3]])
    h = enc.embed(codes)
    assert h.shape == (2, 5)
    assert not np.allclose(h[0], h[1])
    assert np.allclose(encode_context(enc, codes[1]), h[1], rtol=0, atol=1e-14)
    logits, _ = enc.reconstruct(h)
    assert [lg.shape for lg in logits] == [(2, 3), (2, 2), (2, 4)]
    with pytest.raises(IndexError):
        enc.embed(np.array([[3, 0, 0]]))


def test_encoder_rejects_wide_context_dimension():
    with pytest.raises(ValueError):
        ContextEncoder([2, 2], Rng(0), embed_dim=4, d_h=8)


def test_aux_loss_uniform_logits_value():
    logits = [np.zeros((4, c)) for c in CARDS]
    codes = np.zeros((4, 3), dtype=int)
    value, _ = aux_loss(logits, codes)
    assert value == pytest.approx(sum(np.log(c) for c in CARDS))


def test_aux_loss_gradient_fd():
    rng = Rng(1)
    enc = ContextEncoder(CARDS, rng, embed_dim=3, d_h=4, hidden=(8,), head_hidden=6)
    codes = codes_for(5, rng)

    def f():
        h = enc.embed(codes)
        return aux_loss(enc.reconstruct(h)[0], codes)[0]

    enc.zero_grad()
    h, hc = enc.encode(codes)
    logits, lc = enc.reconstruct(h)
    _, dl = aux_loss(logits, codes)
    enc.encode_backward(enc.reconstruct_backward(dl, lc), hc)
    check_params(enc, f)


def test_encoder_learns_to_reconstruct():
    rng = Rng(2)
    enc = ContextEncoder(CARDS, rng, embed_dim=8, d_h=6, hidden=(32,), head_hidden=16)
    codes = np.array([[a, b, c] for a in range(3) for b in range(2) for c in range(4)])
    opt = Adam(enc.parameters(), 1e-2)
    for _ in range(200):
        h, hc = enc.encode(codes)
        logits, lc = enc.reconstruct(h)
        _, dl = aux_loss(logits, codes)
        enc.encode_backward(enc.reconstruct_backward(dl, lc), hc)
        opt.step()
    assert reconstruction_accuracy(enc, codes) >= 0.95


# -- conditioned noise ----------------------------------------------------------------

def test_assemble_and_split():
    z = Rng(3).normal((2, 5, 3))
    h = Rng(4).normal((2, 4))
    zs = assemble_conditioned_noise(z, h)
    assert zs.shape == (2, 5, 7)
    assert np.array_equal(zs[:, :, :3], z)
    assert np.all(zs[:, :, 3:] == h[:, None, :])
    dz, dh = split_conditioned_grad(np.ones((2, 5, 7)), 3)
    assert np.array_equal(dh, np.full((2, 4), 5.0))
    with pytest.raises(ValueError):
        assemble_conditioned_noise(z, h[:1])


# -- GAN --------------------------------------------------------------------------------

def small_gan(rng, acgan=True):
    return GanModel(16, 1, CARDS, 4, rng, noise_dim=6, gen_widths=(8, 6, 4), disc_widths=(4, 6, 8),
                    is_acgan=acgan)


def test_gan_shapes_and_sigmoid_range():
    rng = Rng(5)
    gan = small_gan(rng)
    z_star = assemble_conditioned_noise(gan.sample_noise(rng, 3), rng.normal((3, 4)))
    x, _ = gan.generator.forward(z_star)
    assert x.shape == (3, 16, 1) and np.all((x > 0) & (x < 1))
    p, aux, _ = gan.discriminator.forward(x)
    assert p.shape == (3,) and [a.shape for a in aux] == [(3, 3), (3, 2), (3, 4)]
    with pytest.raises(ConfigurationError):
        GanModel(12, 1, CARDS, 4, rng)


def test_discriminator_loss_gradient_fd():
    rng = Rng(6)
    gan = small_gan(rng)
    real, fake = rng.uniform((4, 16, 1)), rng.uniform((4, 16, 1))
    codes = codes_for(4, rng)
    f = lambda: discriminator_loss(gan, real, fake, codes, gamma=0.7, backward=False)
    gan.zero_grad()
    discriminator_loss(gan, real, fake, codes, gamma=0.7)
    check_params(gan.discriminator, f)


def test_generator_loss_gradient_fd_through_generator_and_context():
    rng = Rng(7)
    gan = small_gan(rng)
    codes = codes_for(4, rng)
    z = gan.sample_noise(rng, 4)
    h = rng.normal((4, 4))

    def f():
        fake, _ = gan.generator.forward(assemble_conditioned_noise(z, h))
        disc_state = gan.discriminator.state_dict()
        value, _ = generator_adversarial_loss(gan, fake, codes, lambda_gen=0.5)
        gan.discriminator.load_state_dict(disc_state)
        return value

    gan.zero_grad()
    fake, gc = gan.generator.forward(assemble_conditioned_noise(z, h))
    _, dfake = generator_adversarial_loss(gan, fake, codes, lambda_gen=0.5)
    _, dh = split_conditioned_grad(gan.generator.backward(dfake, gc), gan.noise_dim)
    check_params(gan.generator, f)
    assert relative_error(dh, numerical_grad(f, h)) < 1e-5


def test_baseline_equals_acgan_with_zero_aux_weights():
    a, b = small_gan(Rng(8), acgan=True), small_gan(Rng(8), acgan=False)
    rng = Rng(9)
    real, fake = rng.uniform((4, 16, 1)), rng.uniform((4, 16, 1))
    codes = codes_for(4, rng)
    la = discriminator_loss(a, real, fake, codes, gamma=0.0)
    lb = discriminator_loss(b, real, fake, codes)
    assert la == lb
    for (ka, pa), (kb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert ka == kb and np.array_equal(pa.grad, pb.grad)
    ga, da = generator_adversarial_loss(a, fake, codes, lambda_gen=0.0)
    gb, db = generator_adversarial_loss(b, fake, codes)
    assert ga == gb and np.array_equal(da, db)


# -- diffusion ----------------------------------------------------------------------------

def test_cosine_schedule_properties():
    betas, ab = cosine_beta_schedule(1000)
    assert betas.shape == (1000,)
    assert np.all(np.diff(ab) < 0) and ab[0] > 0.99 and ab[-1] < 1e-4
    assert np.all((betas >= 1e-8) & (betas <= 0.999))
    s = 0.008
    f = lambda t: np.cos((t / 1000 + s) / (1 + s) * np.pi / 2) ** 2
    assert ab[0] == pytest.approx(f(1) / f(0), rel=1e-12)


def test_forward_diffuse_limits():
    _, ab = cosine_beta_schedule(1000)
    x0 = np.ones((1, 4, 1))
    noise = np.zeros_like(x0)
    assert np.allclose(forward_diffuse(x0, 1, noise, ab), np.sqrt(ab[0]))
    eps = Rng(1).normal((20000, 1, 1))
    xt = forward_diffuse(np.ones_like(eps), 1000, eps, ab)
    assert abs(xt.mean()) < 0.03 and abs(xt.var() - 1) < 0.05
    with pytest.raises(ValueError):
        forward_diffuse(x0, 0, noise, ab)


def test_fourier_single_tone_and_components():
    T = 16
    t = np.arange(T)
    w = (0.7 * np.cos(2 * np.pi * 3 * t / T + 0.4) + 0.2 * np.cos(2 * np.pi * 5 * t / T))[None, :, None]
    mask = top_k_mask(w, 1)
    assert set(np.flatnonzero(mask[0, :, 0])) == {3, 13}
    season = fourier_synthesis(w, mask)
    assert np.allclose(season[0, :, 0], 0.7 * np.cos(2 * np.pi * 3 * t / T + 0.4))
    freq, amp, phase = fourier_components(w, 2)
    rebuilt = (amp[..., None] * np.cos(2 * np.pi * freq[..., None] * t + phase[..., None])).sum(axis=1)
    assert np.allclose(rebuilt[0, 0], fourier_synthesis(w, top_k_mask(w, 2))[0, :, 0])
    assert np.allclose(sorted(amp[0, :, 0]), [0.2, 0.7])
    with pytest.raises(ConfigurationError):
        top_k_mask(w, 9)


def test_polynomial_basis():
    C = polynomial_basis(5, 3)
    assert C.shape == (5, 4) and np.all(C[:, 0] == 1) and C[-1, 1] == 1.0


def small_diffusion(rng, loss_type="l1"):
    model = DiffusionModel(8, 2, 3, rng, T_steps=20, hidden=10, n_blocks=1, t_dim=4, top_k=2,
                           lambda2=0.3, loss_type=loss_type)
    for head in (model.trend_head, model.season_head, model.residual_head):
        head.weight.value[...] = 0.3 * rng.normal(head.weight.value.shape)
    return model


@pytest.mark.parametrize("loss_type", ["l1", "l2"])
def test_diffusion_loss_gradient_fd(loss_type):
    rng = Rng(10)
    model = small_diffusion(rng, loss_type)
    x0 = rng.uniform((3, 8, 2))
    h = rng.normal((3, 3))
    t = np.array([1, 7, 19])
    noise = rng.normal((3, 8, 2))
    f = lambda: diffusion_loss(model, x0, h, t, noise, backward=False)[0]
    model.zero_grad()
    _, dh = diffusion_loss(model, x0, h, t, noise)
    check_params(model, f, tol=1e-4)
    assert relative_error(dh, numerical_grad(f, h)) < 1e-4


def test_diffusion_sampling_range_and_determinism():
    rng = Rng(11)
    model = small_diffusion(rng)
    model.init_ema()
    h = rng.normal((4, 3))
    a = diffusion_sample(model, h, seed=5)
    b = diffusion_sample(model, h, seed=5)
    c = diffusion_sample(model, h, seed=6)
    assert a.shape == (4, 8, 2) and np.all((a >= 0) & (a <= 1))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_ema_swap_restores_live_weights():
    rng = Rng(12)
    model = small_diffusion(rng)
    model.init_ema()
    live = model.state_dict()
    for p in model.parameters():
        p.value += 1.0
    model.update_ema()
    moved = model.state_dict()
    model.swap_ema()
    model.swap_ema()
    assert all(np.array_equal(moved[k], v) for k, v in model.state_dict().items())
    k = next(iter(live))
    assert np.allclose(model.ema[k], live[k] + 0.01)
