"""Diffusion and VAE models with their training and sampling routines."""

from .nets import ConvVAE, ToyDenoiser, UNetDenoiser
from .schedule import DiffusionSchedule, forward_diffuse, predict_x0
from .train import (
    Trainer,
    ddpm_loss,
    ddpm_sample,
    ddpm_train_step,
    kl_standard_normal,
    vae_loss,
    vae_sample,
    vae_train_step,
)

__all__ = [
    "ConvVAE",
    "DiffusionSchedule",
    "ToyDenoiser",
    "Trainer",
    "UNetDenoiser",
    "ddpm_loss",
    "ddpm_sample",
    "ddpm_train_step",
    "forward_diffuse",
    "kl_standard_normal",
    "predict_x0",
    "vae_loss",
    "vae_sample",
    "vae_train_step",
]
