"""Saturation / brightness / contrast enhancement of generated images.

Each adjustment blends the image with a degenerate version of itself:
``out = degenerate + factor * (in - degenerate)``, evaluated in float64,
rounded half-up and clamped to [0, 255].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])
KINDS = ("saturation", "brightness", "contrast")


def luma(img: np.ndarray) -> np.ndarray:
    px = np.asarray(img, dtype=np.float64)
    return px[..., 0] * LUMA[0] + px[..., 1] * LUMA[1] + px[..., 2] * LUMA[2]


def _degenerate(px: np.ndarray, kind: str) -> np.ndarray:
    if kind == "saturation":
        return np.repeat(luma(px)[..., None], 3, axis=-1)
    if kind == "brightness":
        return np.zeros_like(px)
    if kind == "contrast":
        return np.full_like(px, luma(px).mean())
    raise ValueError(f"unknown adjustment {kind!r}; expected one of {KINDS}")


def adjust(img: np.ndarray, kind: str, factor: float) -> np.ndarray:
    if not np.isfinite(factor):
        raise ValueError("factor must be finite")
    px = np.asarray(img, dtype=np.uint8).astype(np.float64)
    deg = _degenerate(px, kind)
    out = deg + factor * (px - deg)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class EnhanceConfig:
    saturation: float = 2.0
    brightness: float = 1.5
    contrast: float = 1.5


def enhance_pipeline(img: np.ndarray, config: EnhanceConfig = EnhanceConfig()) -> np.ndarray:
    """Saturation, then brightness, then contrast."""
    out = adjust(img, "saturation", config.saturation)
    out = adjust(out, "brightness", config.brightness)
    return adjust(out, "contrast", config.contrast)
