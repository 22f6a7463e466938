"""Image-set evaluation: PSNR, SSIM, Frechet distance, Fourier score, divergence score."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .data import list_pngs, read_png
from .enhance import luma
from .physics import gauss_loss, rgb_to_field

C1_DEFAULT = (0.01 * 255) ** 2
C2_DEFAULT = (0.03 * 255) ** 2


def _same_shape(a: np.ndarray, b: np.ndarray, name: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def psnr(i: np.ndarray, g: np.ndarray, i_max: float = 255.0) -> float:
    """PSNR in dB over all pixels and channels; ``math.inf`` for identical images."""
    i = np.asarray(i, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    _same_shape(i, g, "psnr")
    mse = np.mean((i - g) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(i_max ** 2 / mse))


def _gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return luma(img) if img.ndim == 3 and img.shape[-1] == 3 else img


def ssim(i: np.ndarray, g: np.ndarray, c1: float = C1_DEFAULT, c2: float = C2_DEFAULT,
         windowed: bool = False, window: int = 7) -> float:
    """SSIM on BT.601 luma from whole-image statistics; ``windowed`` averages a local uniform-window map."""
    _same_shape(np.asarray(i), np.asarray(g), "ssim")
    x, y = _gray(i), _gray(g)
    if windowed:
        mx, my = uniform_filter(x, window), uniform_filter(y, window)
        vx = uniform_filter(x * x, window) - mx * mx
        vy = uniform_filter(y * y, window) - my * my
        cxy = uniform_filter(x * y, window) - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        return float(s.mean())
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cxy = ((x - mx) * (y - my)).mean()
    return float(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))


def fourier_score(i: np.ndarray, g: np.ndarray) -> float:
    """|F(I) - F(G)|^2 / (|F(I)|^2 + |F(G)|^2) on luma; 0 for identical images."""
    _same_shape(np.asarray(i), np.asarray(g), "fourier_score")
    fi = np.fft.fft2(_gray(i))
    fg = np.fft.fft2(_gray(g))
    den = np.sum(np.abs(fi) ** 2) + np.sum(np.abs(fg) ** 2)
    if den == 0:
        return 0.0
    return float(np.sum(np.abs(fi - fg) ** 2) / den)


def divergence_score(img: np.ndarray) -> float:
    """Mean |div B| of the (R - G, B - G) field of an RGB byte image."""
    x = np.asarray(img, dtype=np.float64) / 127.5 - 1.0
    return float(gauss_loss(rgb_to_field(x.transpose(2, 0, 1))).data)


# ---------------------------------------------------------------------------
# Frechet distance
# ---------------------------------------------------------------------------

def embed_downsample_gray(img: np.ndarray, side: int = 8) -> np.ndarray:
    """Luma, area-averaged to side x side, flattened, scaled to [0, 1]."""
    y = _gray(img)
    h, w = y.shape
    if h % side or w % side:
        raise ValueError(f"image {h}x{w} not divisible into {side}x{side} blocks")
    pooled = y.reshape(side, h // side, side, w // side).mean(axis=(1, 3))
    return (pooled / 255.0).reshape(-1)


EMBEDDINGS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {"downsample-gray-64": embed_downsample_gray}


def _fit_gaussian(feats: np.ndarray):
    feats = np.asarray(feats, dtype=np.float64)
    mu = feats.mean(axis=0)
    if feats.shape[0] > 1:
        cov = np.cov(feats, rowvar=False)
    else:
        cov = np.zeros((feats.shape[1], feats.shape[1]))
    return mu, np.atleast_2d(cov)


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((a + a.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_from_stats(mu_p, cov_p, mu_q, cov_q, reg: float = 1e-6) -> float:
    """|mu_p - mu_q|^2 + Tr(S_p + S_q - 2 (S_p S_q)^(1/2)), via eigh of S_p^(1/2) S_q S_p^(1/2)."""
    d = len(mu_p)
    cov_p = np.asarray(cov_p, dtype=np.float64) + reg * np.eye(d)
    cov_q = np.asarray(cov_q, dtype=np.float64) + reg * np.eye(d)
    for name, c in (("reference", cov_p), ("generated", cov_q)):
        if not np.all(np.isfinite(c)) or np.linalg.eigvalsh((c + c.T) / 2).min() <= 0:
            raise ValueError(f"degenerate {name} covariance after regularization")
    root_p = _sqrt_psd(cov_p)
    inner = root_p @ cov_q @ root_p
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = np.sum(np.sqrt(np.clip(vals, 0, None)))
    diff = np.asarray(mu_p, dtype=np.float64) - np.asarray(mu_q, dtype=np.float64)
    dist = diff @ diff + np.trace(cov_p) + np.trace(cov_q) - 2 * tr_sqrt
    return float(max(dist, 0.0))


def frechet_features(feats_p: np.ndarray, feats_q: np.ndarray, reg: float = 1e-6) -> float:
    mu_p, cov_p = _fit_gaussian(feats_p)
    mu_q, cov_q = _fit_gaussian(feats_q)
    return frechet_from_stats(mu_p, cov_p, mu_q, cov_q, reg)


def frechet_distance(ref_set: Sequence[np.ndarray], gen_set: Sequence[np.ndarray],
                     embed: str = "downsample-gray-64") -> float:
    try:
        fn = EMBEDDINGS[embed]
    except KeyError:
        raise ValueError(f"unknown embedding {embed!r}; known: {sorted(EMBEDDINGS)}") from None
    fp = np.stack([fn(im) for im in ref_set])
    fq = np.stack([fn(im) for im in gen_set])
    return frechet_features(fp, fq)


# ---------------------------------------------------------------------------
# set-level evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalConfig:
    embedding: str = "downsample-gray-64"
    pairing: str = "best-match"
    c1: float = C1_DEFAULT
    c2: float = C2_DEFAULT
    windowed_ssim: bool = False


@dataclass
class MetricsReport:
    rows: List[dict]
    aggregates: dict
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def enc(v):
            return "inf" if isinstance(v, float) and math.isinf(v) else v

        rows = [{k: enc(v) for k, v in r.items()} for r in self.rows]
        return {"rows": rows, "aggregates": self.aggregates, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        d = json.loads(text)

        def dec(v):
            return math.inf if v == "inf" else v

        rows = [{k: dec(v) for k, v in r.items()} for r in d["rows"]]
        return cls(rows, d["aggregates"], d["config"])

    def table(self) -> str:
        a = self.aggregates
        lines = [
            f"{'metric':<10}{'value':>14}",
            f"{'PSNR':<10}{_fmt(a['avg_psnr']):>14}",
            f"{'SSIM':<10}{_fmt(a['avg_ssim']):>14}",
            f"{'FID*':<10}{_fmt(a['fid']):>14}",
            f"{'FS':<10}{_fmt(a['avg_fs']):>14}",
            f"{'Div':<10}{_fmt(a['avg_div']):>14}",
            f"generated={a['n_generated']} references={a['n_reference']} infinite_psnr={a['n_infinite_psnr']}",
            f"*FID uses embedding '{self.config.get('embedding')}', not Inception features",
        ]
        return "\n".join(lines)


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    return f"{v:.4f}"


def evaluate_images(refs: Sequence[np.ndarray], gens: Sequence[np.ndarray], config: EvalConfig = EvalConfig(),
                    gen_ids: Optional[Sequence[str]] = None, ref_ids: Optional[Sequence[str]] = None) -> MetricsReport:
    if not refs or not gens:
        raise ValueError("evaluation needs at least one reference and one generated image")
    if config.pairing != "best-match":
        raise ValueError(f"unsupported pairing protocol {config.pairing!r}")
    ref_ids = list(ref_ids or [str(k) for k in range(len(refs))])
    gen_ids = list(gen_ids or [str(k) for k in range(len(gens))])
    rows = []
    for gid, g in zip(gen_ids, gens):
        best = None
        best_ssim = -math.inf
        best_fs = math.inf
        best_psnr = -math.inf
        for rid, r in zip(ref_ids, refs):
            p = psnr(r, g)
            s = ssim(r, g, config.c1, config.c2, config.windowed_ssim)
            f = fourier_score(r, g)
            if s > best_ssim:
                best_ssim, best = s, rid
            best_psnr = max(best_psnr, p)
            best_fs = min(best_fs, f)
        rows.append(
            {
                "id": gid,
                "best_match_ref_id": best,
                "psnr": best_psnr,
                "ssim": best_ssim,
                "fourier_score": best_fs,
                "divergence_score": divergence_score(g),
            }
        )
    finite_psnr = [r["psnr"] for r in rows if not math.isinf(r["psnr"])]
    aggregates = {
        "avg_psnr": float(np.mean(finite_psnr)) if finite_psnr else None,
        "n_infinite_psnr": len(rows) - len(finite_psnr),
        "avg_ssim": float(np.mean([r["ssim"] for r in rows])),
        "fid": frechet_distance(refs, gens, config.embedding),
        "avg_fs": float(np.mean([r["fourier_score"] for r in rows])),
        "avg_div": float(np.mean([r["divergence_score"] for r in rows])),
        "n_generated": len(gens),
        "n_reference": len(refs),
    }
    return MetricsReport(rows, aggregates, asdict(config))


def evaluate_sets(ref_dir, gen_dir, config: EvalConfig = EvalConfig()) -> MetricsReport:
    ref_paths = list_pngs(Path(ref_dir))
    gen_paths = list_pngs(Path(gen_dir))
    if not ref_paths:
        raise ValueError(f"no PNG images in {ref_dir}")
    if not gen_paths:
        raise ValueError(f"no PNG images in {gen_dir}")
    refs = [read_png(p) for p in ref_paths]
    gens = [read_png(p) for p in gen_paths]
    shapes = {im.shape for im in refs + gens}
    if len(shapes) != 1:
        raise ValueError(f"images must share one resolution, found {sorted(shapes)}")
    return evaluate_images(refs, gens, config, [p.name for p in gen_paths], [p.name for p in ref_paths])
