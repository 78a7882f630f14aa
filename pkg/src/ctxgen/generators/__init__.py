"""Conditional generators: GAN/ACGAN and a trend/Fourier diffusion model."""

from .diffusion import (
    DiffusionModel, cosine_beta_schedule, denoiser_forward, diffusion_loss, diffusion_sample,
    forward_diffuse, fourier_components, fourier_synthesis, polynomial_basis, top_k_mask,
)
from .gan import GanModel, discriminator_loss, gan_generate, generator_adversarial_loss
from .noise import assemble_conditioned_noise, split_conditioned_grad

__all__ = [name for name in dir() if not name.startswith("_")]
