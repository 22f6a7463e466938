"""Linear-beta diffusion schedule and the closed-form forward/inverse maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0 < self.beta_start < self.beta_end < 1:
            raise ValueError("need 0 < beta_start < beta_end < 1")
        beta = np.linspace(self.beta_start, self.beta_end, self.T, dtype=np.float64)
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    def check(self, t) -> np.ndarray:
        t = np.asarray(t)
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise ValueError(f"diffusion step out of range [1, {self.T}]: {t.min()}..{t.max()}")
        return t.astype(np.int64)

    def coef(self, values: np.ndarray, t, shape, dtype) -> np.ndarray:
        """Per-image coefficient values[t-1] broadcast to a batch of ``shape``."""
        t = self.check(t)
        c = values[t - 1].astype(dtype)
        return np.broadcast_to(c.reshape((-1,) + (1,) * (len(shape) - 1)), shape)


def forward_diffuse(x0: np.ndarray, t, noise: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.asarray(x0)
    if np.shape(noise) != x0.shape:
        raise ValueError(f"noise shape {np.shape(noise)} does not match x0 {x0.shape}")
    ab = sched.coef(sched.alpha_bar, t, x0.shape, np.float64)
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise).astype(x0.dtype)


def predict_x0(x_t, t, eps_hat, sched: DiffusionSchedule, clamp: bool = True) -> Tensor:
    """(x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t), clamped to [-1, 1]; differentiable in eps_hat."""
    eps_hat = ad.as_tensor(eps_hat)
    x_t = np.asarray(x_t.data if isinstance(x_t, Tensor) else x_t)
    if x_t.shape != eps_hat.shape:
        raise ValueError(f"x_t shape {x_t.shape} does not match eps_hat {eps_hat.shape}")
    ab = sched.coef(sched.alpha_bar, t, x_t.shape, np.float64)
    inv = (1.0 / np.sqrt(ab)).astype(eps_hat.dtype)
    k = (-np.sqrt(1.0 - ab) / np.sqrt(ab)).astype(eps_hat.dtype)
    x0 = ad.mul(eps_hat, Tensor(k)) + Tensor((x_t * inv).astype(eps_hat.dtype))
    return ad.clamp(x0, -1.0, 1.0) if clamp else x0
