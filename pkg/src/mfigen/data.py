"""Bz normalization, blue-white-red encoding, augmentations and dataset I/O."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .fieldsim import DefectScene, FieldMap, render_scene

logger = logging.getLogger(__name__)

FIELD_MAGIC = b"PIMF"
FIELD_VERSION = 1


@dataclass
class MfiImage:
    """8-bit RGB rendering with its symmetric colormap calibration (tesla)."""

    pixels: np.ndarray
    vmax: float = 1.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 pixels, got {self.pixels.shape}")
        if not self.vmax > 0:
            raise ValueError("vmax must be positive")

    @property
    def vmin(self) -> float:
        return -self.vmax


def round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


# ---------------------------------------------------------------------------
# normalization and colormap
# ---------------------------------------------------------------------------

def normalize_field(f) -> Tuple[np.ndarray, float]:
    """Scale Bz into [-1, 1] by its max magnitude. Returns (values, vmax)."""
    values = f.values if isinstance(f, FieldMap) else np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot normalize a field with non-finite values")
    vmax = float(np.max(np.abs(values))) if values.size else 0.0
    if vmax == 0.0:
        vmax = 1.0
    return values / vmax, vmax


def encode_bwr(v: np.ndarray, vmax: float = 1.0) -> MfiImage:
    """Map normalized values in [-1, 1] to blue-white-red RGB bytes.

    t = (v + 1) / 2; blue (0,0,255) at t=0, white at t=0.5, red (255,0,0) at t=1.
    """
    v = np.asarray(v, dtype=np.float64)
    if np.any(~np.isfinite(v)) or np.any(np.abs(v) > 1.0):
        raise ValueError("encode_bwr: values must lie in [-1, 1]")
    t = (v + 1.0) / 2.0
    low = t <= 0.5
    rg_low = round_half_up(510.0 * t)
    gb_high = round_half_up(510.0 * (1.0 - t))
    r = np.where(low, rg_low, 255.0)
    g = np.where(low, rg_low, gb_high)
    b = np.where(low, 255.0, gb_high)
    return MfiImage(np.stack([r, g, b], axis=-1).astype(np.uint8), vmax)


def decode_bwr(img) -> np.ndarray:
    """Inverse of :func:`encode_bwr`: v = (R - B) / 255."""
    px = img.pixels if isinstance(img, MfiImage) else np.asarray(img)
    px = px.astype(np.float64)
    return (px[..., 0] - px[..., 2]) / 255.0


# ---------------------------------------------------------------------------
# augmentations
# ---------------------------------------------------------------------------

def augment_gaussian(v: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return np.array(v, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return np.clip(v + rng.normal(0.0, sigma, size=np.shape(v)), -1.0, 1.0)


def pink_noise(shape: Tuple[int, int], amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean 2-D noise with power spectral density ~ 1/|f|, RMS = ``amplitude``."""
    h, w = shape
    white = np.fft.fft2(rng.standard_normal((h, w)))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    fnorm = np.sqrt(fx * fx + fy * fy)
    gain = np.zeros_like(fnorm)
    nz = fnorm > 0
    gain[nz] = 1.0 / np.sqrt(fnorm[nz])
    noise = np.real(np.fft.ifft2(white * gain))
    noise -= noise.mean()
    rms = np.sqrt(np.mean(noise * noise))
    if rms == 0:
        return noise
    return noise * (amplitude / rms)


def augment_pink(v: np.ndarray, amplitude: float, seed: int) -> np.ndarray:
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    if amplitude == 0:
        return np.array(v, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return np.clip(v + pink_noise(np.shape(v), amplitude, rng), -1.0, 1.0)


def augment_rotate(v: np.ndarray, k: int) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[0] != v.shape[1]:
        raise ValueError(f"rotation needs a square grid, got {v.shape}")
    return np.rot90(v, k).copy()


def augment_warp_shift(v: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Cyclic translation: dx along columns, dy along rows."""
    return np.roll(np.asarray(v), shift=(dy, dx), axis=(0, 1)).copy()


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_field(path: Path, values: np.ndarray) -> None:
    values = np.asarray(values)
    h, w = values.shape
    header = FIELD_MAGIC + struct.pack("<III", FIELD_VERSION, h, w)
    Path(path).write_bytes(header + values.astype("<f4").tobytes(order="C"))


def read_field(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FIELD_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, h, w = struct.unpack("<III", raw[4:16])
    if version != FIELD_VERSION:
        raise ValueError(f"{path}: unsupported field version {version}")
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != h * w:
        raise ValueError(f"{path}: expected {h * w} values, found {data.size}")
    return data.reshape(h, w).astype(np.float32)


def write_png(path: Path, pixels: np.ndarray) -> None:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(path, format="PNG", optimize=False)


def read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def images_to_batch(pixels: Sequence[np.ndarray], dtype=np.float32) -> np.ndarray:
    """Stack H x W x 3 bytes into an N x 3 x H x W array scaled to [-1, 1]."""
    arr = np.stack([np.asarray(p) for p in pixels]).astype(np.float64)
    return (arr.transpose(0, 3, 1, 2) / 127.5 - 1.0).astype(dtype)


def batch_to_images(batch: np.ndarray) -> List[np.ndarray]:
    """Inverse of :func:`images_to_batch` with round-half-up quantization."""
    x = np.clip(np.asarray(batch, dtype=np.float64), -1.0, 1.0)
    px = np.clip(round_half_up((x + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return [p.transpose(1, 2, 0).copy() for p in px]


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass
class AugmentPlan:
    """Each listed setting yields one augmented copy of every clean entry."""

    gaussian_sigmas: List[float] = field(default_factory=list)
    pink_amplitudes: List[float] = field(default_factory=list)
    rotations: List[int] = field(default_factory=list)
    shifts: List[Tuple[int, int]] = field(default_factory=list)

    @classmethod
    def default(cls, size: int = 64) -> "AugmentPlan":
        q = size // 4
        return cls([0.02, 0.05], [0.05], [1, 2, 3], [(q, 0), (0, -q)])

    def tags(self) -> List[Tuple[str, tuple]]:
        out = [(f"gauss{s:g}", ("gaussian", s)) for s in self.gaussian_sigmas]
        out += [(f"pink{a:g}", ("pink", a)) for a in self.pink_amplitudes]
        out += [(f"rot{k * 90}", ("rotate", k)) for k in self.rotations]
        out += [(f"shift{dx:+d}{dy:+d}", ("shift", (dx, dy))) for dx, dy in self.shifts]
        return out


def _apply(v: np.ndarray, spec: tuple, seed: int) -> np.ndarray:
    kind, arg = spec
    if kind == "gaussian":
        return augment_gaussian(v, arg, seed)
    if kind == "pink":
        return augment_pink(v, arg, seed)
    if kind == "rotate":
        return augment_rotate(v, arg)
    if kind == "shift":
        return augment_warp_shift(v, arg[0], arg[1])
    raise ValueError(f"unknown augmentation {kind!r}")


@dataclass
class DatasetManifest:
    entries: List[dict]
    global_: dict

    def to_json(self) -> str:
        return json.dumps({"entries": self.entries, "global": self.global_}, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, root: Path) -> "DatasetManifest":
        path = Path(root) / "manifest.json"
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise FileNotFoundError(f"no manifest.json in {root}") from None
        return cls(d["entries"], d["global"])


def build_dataset(
    scenes: Sequence[DefectScene],
    augment_plan: Optional[AugmentPlan],
    out_dir: Path,
    seed: int,
    h: int = 64,
    w: int = 64,
    pitch: float = 100e-6,
    scan_height: float = 300e-6,
) -> DatasetManifest:
    """Render, normalize, augment and write every scene; returns the written manifest."""
    out_dir = Path(out_dir)
    img_dir, fld_dir = out_dir / "images", out_dir / "fields"
    try:
        img_dir.mkdir(parents=True, exist_ok=True)
        fld_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directories under {out_dir}: {exc}") from exc
    plan = augment_plan or AugmentPlan()
    tags = [("clean", None)] + plan.tags()
    entries = []
    vmax_all = 0.0
    idx = 0
    for si, scene in enumerate(scenes):
        fmap = render_scene(scene, h, w, pitch, scan_height)
        v, vmax = normalize_field(fmap)
        vmax_all = max(vmax_all, vmax)
        for tag, spec in tags:
            va = v if spec is None else _apply(v, spec, seed ^ idx)
            stem = f"{si:04d}_{tag}"
            img_path = img_dir / f"{stem}.png"
            fld_path = fld_dir / f"{stem}.pimf"
            try:
                write_png(img_path, encode_bwr(va, vmax).pixels)
                write_field(fld_path, va * vmax)
            except OSError as exc:
                raise OSError(f"failed writing {img_path}: {exc}") from exc
            entries.append(
                {
                    "image_path": f"images/{stem}.png",
                    "field_path": f"fields/{stem}.pimf",
                    "scene_index": si,
                    "pin_config_id": scene.pin_config_id,
                    "offset": list(scene.offset),
                    "defect_kind": scene.defect_kind,
                    "augmentation": tag,
                    "vmax": vmax,
                }
            )
            idx += 1
    manifest = DatasetManifest(
        entries,
        {"H": h, "W": w, "pitch": pitch, "scan_height": scan_height, "vmax": vmax_all, "seed": seed},
    )
    (out_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    (out_dir / "scenes.json").write_text(
        json.dumps([s.to_dict() for s in scenes], indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    logger.info("wrote %d entries to %s", len(entries), out_dir)
    return manifest


def load_scenes(root: Path) -> List[DefectScene]:
    d = json.loads((Path(root) / "scenes.json").read_text(encoding="utf-8"))
    return [DefectScene.from_dict(s) for s in d]


def load_dataset_images(root: Path) -> np.ndarray:
    """All manifest images of a dataset as an N x 3 x H x W float32 batch in [-1, 1]."""
    root = Path(root)
    manifest = DatasetManifest.load(root)
    if not manifest.entries:
        raise ValueError(f"dataset {root} has no entries")
    return images_to_batch([read_png(root / e["image_path"]) for e in manifest.entries])


def list_pngs(directory: Path) -> List[Path]:
    """PNG images of a directory; a dataset root resolves to its manifest images."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    if (directory / "manifest.json").exists():
        manifest = DatasetManifest.load(directory)
        return [directory / e["image_path"] for e in manifest.entries]
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
