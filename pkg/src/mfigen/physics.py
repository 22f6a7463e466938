"""Divergence (flux conservation) and boundary-decay losses on image-derived fields.

All functions accept autodiff tensors or plain arrays and return tensors, so
the same code scores images as a metric and regularizes training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class VectorField2D:
    """In-plane field components on a unit-spaced grid; shapes (..., H, W)."""

    bx: Tensor
    by: Tensor

    def __post_init__(self):
        self.bx = ad.as_tensor(self.bx)
        self.by = ad.as_tensor(self.by)
        if self.bx.shape != self.by.shape:
            raise ValueError(f"component shape mismatch {self.bx.shape} vs {self.by.shape}")

    @property
    def shape(self):
        return self.bx.shape


def rgb_to_field(img) -> VectorField2D:
    """Channels in [-1, 1] (axis -3 is RGB) to (Bx, By) = (R - G, B - G) on a [0, 1] scale.

    White maps to the zero vector; on the bwr curve positive values land in Bx
    and negative values in By.
    """
    img = ad.as_tensor(img)
    if img.ndim < 3 or img.shape[-3] != 3:
        raise ValueError(f"expected 3 channels on axis -3, got shape {img.shape}")
    r = img[..., 0, :, :]
    g = img[..., 1, :, :]
    b = img[..., 2, :, :]
    return VectorField2D(ad.scale(r - g, 0.5), ad.scale(b - g, 0.5))


def divergence(f: VectorField2D) -> Tensor:
    """Central-difference dBx/dx + dBy/dy on interior pixels (x = column, y = row)."""
    h, w = f.shape[-2:]
    if h < 3 or w < 3:
        raise ValueError(f"divergence needs at least a 3x3 grid, got {h}x{w}")
    dbx = f.bx[..., 1:-1, 2:] - f.bx[..., 1:-1, :-2]
    dby = f.by[..., 2:, 1:-1] - f.by[..., :-2, 1:-1]
    return ad.scale(dbx + dby, 0.5)


def gauss_loss(f: VectorField2D) -> Tensor:
    """Mean |div B| over interior pixels."""
    return ad.mean(ad.abs(divergence(f)))


def ring_mask(h: int, w: int, dtype=np.float64) -> np.ndarray:
    m = np.zeros((h, w), dtype=dtype)
    m[0, :] = m[-1, :] = 1
    m[:, 0] = m[:, -1] = 1
    return m


def boundary_loss(f: VectorField2D) -> Tensor:
    """Mean field magnitude over the one-pixel outer ring (corners counted once)."""
    h, w = f.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError(f"boundary loss needs at least a 2x2 grid, got {h}x{w}")
    mag = ad.sqrt(ad.square(f.bx) + ad.square(f.by))
    mask = np.broadcast_to(ring_mask(h, w, mag.dtype), mag.shape).copy()
    count = float(mask.sum())
    return ad.scale(ad.sum(mag * Tensor(mask)), 1.0 / count)


@dataclass
class PhysicsTerms:
    total: Tensor
    gauss: Tensor
    boundary: Tensor


def physics_terms(img_batch, alpha: float, beta: float) -> PhysicsTerms:
    """alpha * gauss_loss + beta * boundary_loss of an N x 3 x H x W batch, averaged over images."""
    img_batch = ad.as_tensor(img_batch)
    f = rgb_to_field(img_batch)
    l1 = gauss_loss(f)
    l2 = boundary_loss(f)
    total = ad.scale(l1, alpha) + ad.scale(l2, beta)
    return PhysicsTerms(total, l1, l2)


def physics_regularizer(img_batch, alpha: float = 0.5, beta: float = 0.2) -> Tensor:
    if alpha == 0 and beta == 0:
        return Tensor(np.zeros((), dtype=ad.as_tensor(img_batch).dtype))
    return physics_terms(img_batch, alpha, beta).total
