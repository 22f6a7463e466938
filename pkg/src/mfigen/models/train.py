"""Loss assembly, optimizer steps and samplers for the diffusion and VAE models."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import Adam, Tensor
from ..physics import physics_terms
from .nets import ConvVAE, Network
from .schedule import DiffusionSchedule, forward_diffuse, predict_x0

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step", "mse", "l1", "l2", "total")


class TrainingError(RuntimeError):
    pass


@dataclass
class LossBreakdown:
    total: Tensor
    mse: float
    l1: float
    l2: float

    def as_row(self, step: int) -> Dict[str, float]:
        return {"step": step, "mse": self.mse, "l1": self.l1, "l2": self.l2, "total": float(self.total.data)}


def _physics(x: Tensor, alpha: float, beta: float):
    """Weighted physics penalty plus its raw terms; skipped entirely when both weights are zero."""
    if alpha == 0 and beta == 0:
        return None, 0.0, 0.0
    terms = physics_terms(x, alpha, beta)
    return terms.total, float(terms.gauss.data), float(terms.boundary.data)


def ddpm_loss(model: Network, x0: np.ndarray, t: np.ndarray, noise: np.ndarray, sched: DiffusionSchedule,
              alpha: float = 0.5, beta: float = 0.2) -> LossBreakdown:
    """mean |eps - eps_hat|^2 + alpha * gauss(x0_hat) + beta * boundary(x0_hat)."""
    x_t = forward_diffuse(x0, t, noise, sched)
    eps_hat = model(x_t, t)
    mse = ad.mean(ad.square(eps_hat - Tensor(noise.astype(eps_hat.dtype))))
    total = mse
    phys, l1, l2 = (None, 0.0, 0.0)
    if alpha != 0 or beta != 0:
        x0_hat = predict_x0(x_t, t, eps_hat, sched, clamp=True)
        phys, l1, l2 = _physics(x0_hat, alpha, beta)
        total = mse + phys
    return LossBreakdown(total, float(mse.data), l1, l2)


def _check_finite(step: int, br: LossBreakdown) -> None:
    vals = br.as_row(step)
    if not all(np.isfinite(v) for v in vals.values()):
        raise TrainingError(f"non-finite loss at step {step}: {vals}")


def ddpm_train_step(batch: np.ndarray, model: Network, opt: Adam, sched: DiffusionSchedule,
                    rng: np.random.Generator, alpha: float = 0.5, beta: float = 0.2, step: int = 0) -> LossBreakdown:
    """One Adam step on a batch: uniform t per image, standard normal noise."""
    n = batch.shape[0]
    t = rng.integers(1, sched.T + 1, size=n)
    noise = rng.standard_normal(batch.shape).astype(batch.dtype)
    opt.zero_grad()
    try:
        br = ddpm_loss(model, batch, t, noise, sched, alpha, beta)
    except FloatingPointError as exc:
        raise TrainingError(f"non-finite value at step {step}: {exc}") from exc
    _check_finite(step, br)
    br.total.backward()
    opt.step()
    return br


def ddpm_sample(model: Network, sched: DiffusionSchedule, n: int, seed: int, h: int, w: int,
                chunk: int = 16, channels: int = 3) -> np.ndarray:
    """Ancestral sampling from pure noise with sigma_t^2 = beta_t; returns n x C x H x W in [-1, 1].

    Every image owns a generator derived from ``seed``, so the noise an image sees
    does not depend on ``chunk`` (outputs agree up to float rounding).
    """
    children = np.random.SeedSequence(seed).spawn(n)
    gens = [np.random.default_rng(c) for c in children]
    out = np.empty((n, channels, h, w), dtype=model.dtype)
    for lo in range(0, n, chunk):
        g = gens[lo:lo + chunk]
        x = np.stack([r.standard_normal((channels, h, w)) for r in g]).astype(model.dtype)
        with ad.no_grad():
            for t in range(sched.T, 0, -1):
                tt = np.full(len(g), t)
                eps = model(x, tt).data.astype(np.float64)
                a, b, ab = sched.alpha[t - 1], sched.beta[t - 1], sched.alpha_bar[t - 1]
                mean = (x - (b / np.sqrt(1.0 - ab)) * eps) / np.sqrt(a)
                if t > 1:
                    z = np.stack([r.standard_normal((channels, h, w)) for r in g])
                    mean = mean + np.sqrt(b) * z
                x = mean.astype(model.dtype)
        out[lo:lo + len(g)] = np.clip(x, -1.0, 1.0)
    return out


# ---------------------------------------------------------------------------
# VAE baselines
# ---------------------------------------------------------------------------

def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dims, averaged over the batch."""
    n = mu.shape[0]
    inner = ad.square(mu) + ad.exp(logvar) - logvar
    return ad.scale(ad.sum(inner) - float(mu.size), 0.5 / n)


def vae_loss(model: ConvVAE, batch: np.ndarray, eps: np.ndarray, physics_on: bool,
             alpha: float = 0.5, beta: float = 0.2) -> LossBreakdown:
    mu, logvar = model.encode(batch)
    z = mu + ad.exp(ad.scale(logvar, 0.5)) * Tensor(eps.astype(mu.dtype))
    recon = model.decode(z)
    mse = ad.mean(ad.square(recon - Tensor(batch)))
    total = mse + kl_standard_normal(mu, logvar)
    l1 = l2 = 0.0
    if physics_on:
        phys, l1, l2 = _physics(recon, alpha, beta)
        if phys is not None:
            total = total + phys
    return LossBreakdown(total, float(mse.data), l1, l2)


def vae_train_step(batch: np.ndarray, model: ConvVAE, opt: Adam, rng: np.random.Generator, physics_on: bool,
                   alpha: float = 0.5, beta: float = 0.2, step: int = 0) -> LossBreakdown:
    eps = rng.standard_normal((batch.shape[0], model.latent_dim))
    opt.zero_grad()
    try:
        br = vae_loss(model, batch, eps, physics_on, alpha, beta)
    except FloatingPointError as exc:
        raise TrainingError(f"non-finite value at step {step}: {exc}") from exc
    _check_finite(step, br)
    br.total.backward()
    opt.step()
    return br


def vae_sample(model: ConvVAE, n: int, seed: int) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal((n, model.latent_dim)).astype(model.dtype)
    with ad.no_grad():
        x = model.decode(z).data
    return np.clip(x, -1.0, 1.0)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

MODEL_KINDS = ("ddpm", "ddpm-phys", "vae", "vae-phys")


def default_weights(kind: str) -> tuple:
    """Physics weights per model kind: (0.5, 0.2) for -phys variants, zero otherwise."""
    return (0.5, 0.2) if kind.endswith("-phys") else (0.0, 0.0)


class Trainer:
    """Holds model, optimizer and RNG so training can be checkpointed and resumed exactly."""

    def __init__(self, kind: str, model: Network, data: np.ndarray, *, steps: int, batch_size: int = 8,
                 lr: float = 2e-4, alpha: float = 0.0, beta: float = 0.0, seed: int = 0,
                 sched: Optional[DiffusionSchedule] = None):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.model = model
        self.data = data.astype(model.dtype)
        self.steps = steps
        self.batch_size = batch_size
        self.alpha, self.beta = alpha, beta
        self.sched = sched or DiffusionSchedule()
        self.opt = Adam(model.parameters(), lr=lr)
        self.rng = np.random.default_rng(seed)
        self.step = 0
        self.log: List[Dict[str, float]] = []

    def next_batch(self) -> np.ndarray:
        n = self.data.shape[0]
        idx = self.rng.choice(n, size=self.batch_size, replace=n < self.batch_size)
        return self.data[idx]

    def train_step(self) -> LossBreakdown:
        batch = self.next_batch()
        self.step += 1
        if self.kind.startswith("ddpm"):
            br = ddpm_train_step(batch, self.model, self.opt, self.sched, self.rng, self.alpha, self.beta, self.step)
        else:
            br = vae_train_step(batch, self.model, self.opt, self.rng, self.kind == "vae-phys",
                                self.alpha, self.beta, self.step)
        self.log.append(br.as_row(self.step))
        return br

    def run(self, log_every: int = 50) -> List[Dict[str, float]]:
        while self.step < self.steps:
            br = self.train_step()
            if self.step % log_every == 0 or self.step == self.steps:
                logger.info("step %d total %.5f mse %.5f l1 %.5f l2 %.5f", self.step,
                            float(br.total.data), br.mse, br.l1, br.l2)
        return self.log


def write_log_csv(path, rows: List[Dict[str, float]]) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (row[k] if k == "step" else repr(float(row[k]))) for k in LOG_FIELDS})
