"""Per-command run configuration: JSON file -> dataclass, with CLI overrides and an echo file."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Tuple, Type

ECHO_NAME = "config.echo.json"


class ConfigError(ValueError):
    """Malformed or unknown configuration (CLI exit code 2)."""


@dataclass
class SimulateConfig:
    samples: int = 1
    pin_configs: int = 3
    offsets: int = 3
    seed: int = 0
    height: int = 64
    width: int = 64
    pitch: float = 100e-6
    scan_height: float = 300e-6


@dataclass
class BuildConfig:
    seed: int = 0
    gaussian_sigmas: List[float] = field(default_factory=lambda: [0.02, 0.05])
    pink_amplitudes: List[float] = field(default_factory=lambda: [0.05])
    rotations: List[int] = field(default_factory=lambda: [1, 2, 3])
    # None means +-25% of the grid extent along each axis
    shifts: Optional[List[Tuple[int, int]]] = None


@dataclass
class TrainConfig:
    model: str = "ddpm-phys"
    steps: int = 500
    batch_size: int = 8
    lr: float = 2e-4
    # None picks the model default: 0.5 / 0.2 for -phys variants, 0 otherwise
    alpha: Optional[float] = None
    beta: Optional[float] = None
    seed: int = 0
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    channels: List[int] = field(default_factory=lambda: [32, 64, 128])
    time_dim: int = 128
    groups: int = 8
    latent_dim: int = 32
    log_every: int = 50


@dataclass
class SampleConfig:
    n: int = 8
    seed: int = 0
    chunk: int = 16


@dataclass
class EnhanceRunConfig:
    saturation: float = 2.0
    brightness: float = 1.5
    contrast: float = 1.5


@dataclass
class EvaluateConfig:
    embedding: str = "downsample-gray-64"
    windowed_ssim: bool = False


@dataclass
class GridConfig:
    cols: int = 8
    pad: int = 2


COMMANDS = {
    "simulate": SimulateConfig,
    "build": BuildConfig,
    "train": TrainConfig,
    "sample": SampleConfig,
    "enhance": EnhanceRunConfig,
    "evaluate": EvaluateConfig,
    "grid": GridConfig,
}


def from_dict(cls: Type, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"config must be a JSON object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {cls.__name__} (known: {sorted(known)})")
    return cls(**data)


def load_config(path, command: str):
    """Parse a JSON config file for ``command``; missing keys take defaults, unknown keys are rejected."""
    cls = COMMANDS[command]
    if path is None:
        return cls()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    return from_dict(cls, data)


def apply_overrides(cfg, overrides: dict):
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def write_echo(out_dir, command: str, cfg, inputs: Optional[dict] = None) -> Path:
    """Record the exact parameters (and input paths) that produced ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "config": asdict(cfg), "inputs": inputs or {}}
    path = out_dir / ECHO_NAME
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
