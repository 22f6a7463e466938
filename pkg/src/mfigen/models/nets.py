"""Denoisers and the VAE baseline, built from autodiff primitives."""

from __future__ import annotations

import logging
import math
from typing import Dict, List, Tuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

logger = logging.getLogger(__name__)


def sinusoidal_embedding(t, dim: int, dtype=np.float32) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(dtype)


class Network:
    """Named-parameter container; subclasses register tensors in ``__init__``."""

    def __init__(self, seed: int, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        p = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = p
        return p

    def conv(self, name: str, cin: int, cout: int, k: int = 3, gain: float = 1.0) -> None:
        std = gain / math.sqrt(cin * k * k)
        self._add(f"{name}.w", self._rng.normal(0.0, std, (cout, cin, k, k)))
        self._add(f"{name}.b", np.zeros(cout))

    def dense(self, name: str, cin: int, cout: int, gain: float = 1.0) -> None:
        self._add(f"{name}.w", self._rng.normal(0.0, gain / math.sqrt(cin), (cout, cin)))
        self._add(f"{name}.b", np.zeros(cout))

    def norm(self, name: str, c: int) -> None:
        self._add(f"{name}.g", np.ones(c))
        self._add(f"{name}.b", np.zeros(c))

    def apply_conv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        w = self.params[f"{name}.w"]
        return ad.conv2d(x, w, self.params[f"{name}.b"], stride=stride, padding=w.shape[2] // 2)

    def apply_dense(self, name: str, x: Tensor) -> Tensor:
        return ad.linear(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def apply_norm(self, name: str, x: Tensor, groups: int) -> Tensor:
        return ad.group_norm(x, groups, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter table mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"parameter {k}: shape {arrays[k].shape} vs {p.shape}")
            p.data = np.array(arrays[k], dtype=self.dtype)


class UNetDenoiser(Network):
    """Small U-shaped epsilon predictor.

    Encoder: input conv, then two 2x-pooled stages (channels c0 -> c1 -> c2),
    a bottleneck, and a mirrored decoder that upsamples and adds the matching
    encoder activations. Every block is GroupNorm -> SiLU -> 3x3 conv plus a
    per-channel projection of the time embedding.
    """

    def __init__(self, channels: Tuple[int, int, int] = (32, 64, 128), time_dim: int = 128, groups: int = 8,
                 in_ch: int = 3, seed: int = 0, dtype=np.float32):
        super().__init__(seed, dtype)
        c0, c1, c2 = channels
        self.time_dim, self.groups = time_dim, groups
        self.dense("time.0", time_dim, time_dim)
        self.dense("time.1", time_dim, time_dim)
        self.conv("in", in_ch, c0)
        self.blocks = [
            ("down1", c0, c1, 2),  # last field: spatial downsampling factor
            ("down2", c1, c2, 2),
            ("mid", c2, c2, 1),
            ("up1", c2, c1, 1),
            ("up0", c1, c0, 1),
        ]
        for name, cin, cout, _ in self.blocks:
            self.norm(f"{name}.gn", cin)
            self.conv(f"{name}.conv", cin, cout)
            self.dense(f"{name}.temb", time_dim, cout)
        self.norm("out.gn", c0)
        self.conv("out", c0, in_ch, gain=0.1)

    def _block(self, name: str, x: Tensor, temb: Tensor, down: int) -> Tensor:
        h = ad.silu(self.apply_norm(f"{name}.gn", x, self.groups))
        if down == 2:
            h = ad.avg_pool2x(h)
        h = self.apply_conv(f"{name}.conv", h)
        return ad.add_channel(h, self.apply_dense(f"{name}.temb", temb))

    def __call__(self, x, t) -> Tensor:
        x = ad.as_tensor(x)
        emb = Tensor(sinusoidal_embedding(t, self.time_dim, self.dtype))
        temb = ad.silu(self.apply_dense("time.1", ad.silu(self.apply_dense("time.0", emb))))
        s0 = self.apply_conv("in", x)
        s1 = self._block("down1", s0, temb, 2)
        h = self._block("down2", s1, temb, 2)
        h = self._block("mid", h, temb, 1)
        h = ad.upsample2x(self._block("up1", h, temb, 1)) + s1
        h = ad.upsample2x(self._block("up0", h, temb, 1)) + s0
        h = ad.silu(self.apply_norm("out.gn", h, self.groups))
        return self.apply_conv("out", h)


class ToyDenoiser(Network):
    """Two conv layers with a time-embedding bias in between (gradient-check harness)."""

    def __init__(self, hidden: int = 4, time_dim: int = 8, in_ch: int = 3, seed: int = 0, dtype=np.float64):
        super().__init__(seed, dtype)
        self.time_dim = time_dim
        self.conv("c1", in_ch, hidden)
        self.dense("temb", time_dim, hidden)
        self.conv("c2", hidden, in_ch)

    def __call__(self, x, t) -> Tensor:
        emb = Tensor(sinusoidal_embedding(t, self.time_dim, self.dtype))
        h = ad.add_channel(self.apply_conv("c1", ad.as_tensor(x)), self.apply_dense("temb", emb))
        return self.apply_conv("c2", ad.silu(h))


class ConvVAE(Network):
    """Three pooled conv stages to a Gaussian latent, mirrored decoder with tanh output."""

    def __init__(self, size: Tuple[int, int] = (64, 64), latent_dim: int = 32,
                 channels: Tuple[int, int, int] = (32, 64, 128), in_ch: int = 3, seed: int = 0, dtype=np.float32):
        super().__init__(seed, dtype)
        h, w = size
        if h % 8 or w % 8:
            raise ValueError("VAE input size must be divisible by 8")
        c0, c1, c2 = channels
        self.latent_dim = latent_dim
        self.bottom = (c2, h // 8, w // 8)
        flat = c2 * (h // 8) * (w // 8)
        self.conv("enc0", in_ch, c0)
        self.conv("enc1", c0, c1)
        self.conv("enc2", c1, c2)
        self.dense("enc.out", flat, 2 * latent_dim, gain=0.1)
        self.dense("dec.in", latent_dim, flat)
        self.conv("dec2", c2, c1)
        self.conv("dec1", c1, c0)
        self.conv("dec0", c0, in_ch)

    def encode(self, x) -> Tuple[Tensor, Tensor]:
        h = ad.silu(self.apply_conv("enc0", ad.avg_pool2x(ad.as_tensor(x))))
        h = ad.silu(self.apply_conv("enc1", ad.avg_pool2x(h)))
        h = ad.silu(self.apply_conv("enc2", ad.avg_pool2x(h)))
        h = ad.reshape(h, (h.shape[0], -1))
        out = self.apply_dense("enc.out", h)
        mu = out[:, : self.latent_dim]
        logvar = ad.clamp(out[:, self.latent_dim:], -10.0, 10.0)
        return mu, logvar

    def decode(self, z) -> Tensor:
        z = ad.as_tensor(z)
        h = ad.silu(self.apply_dense("dec.in", z))
        h = ad.reshape(h, (z.shape[0],) + self.bottom)
        h = ad.silu(self.apply_conv("dec2", ad.upsample2x(h)))
        h = ad.silu(self.apply_conv("dec1", ad.upsample2x(h)))
        return ad.tanh(self.apply_conv("dec0", ad.upsample2x(h)))
