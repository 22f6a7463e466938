"""Binary checkpoint format.

Layout (little-endian)::

    b"PIMF" | u32 version | str kind | str config_json
    | table params | u64 adam_step | table adam_m | table adam_v
    | str rng_state_json | u64 step

``str`` is a u32 byte length followed by UTF-8; ``table`` is a u32 count
followed by entries of (str name, u32 ndim, u32 dims..., f32 data).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

MAGIC = b"PIMF"
VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    config: dict
    params: Dict[str, np.ndarray]
    adam_step: int = 0
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    step: int = 0


def _wstr(buf: io.BytesIO, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def _wtable(buf: io.BytesIO, table: Dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(table)))
    for name, arr in table.items():
        arr = np.asarray(arr)
        _wstr(buf, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype("<f4").tobytes(order="C"))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def str(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def table(self) -> Dict[str, np.ndarray]:
        out = {}
        for _ in range(self.u32()):
            name = self.str()
            ndim = self.u32()
            shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim)) if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            out[name] = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        return out


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _wstr(buf, ckpt.kind)
    _wstr(buf, _canonical_json(ckpt.config))
    _wtable(buf, ckpt.params)
    buf.write(struct.pack("<Q", ckpt.adam_step))
    _wtable(buf, ckpt.adam_m)
    _wtable(buf, ckpt.adam_v)
    _wstr(buf, _canonical_json(ckpt.rng_state))
    buf.write(struct.pack("<Q", ckpt.step))
    return buf.getvalue()


def loads(raw: bytes, path="<bytes>") -> Checkpoint:
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    kind = r.str()
    config = json.loads(r.str())
    params = r.table()
    adam_step = r.u64()
    m = r.table()
    v = r.table()
    rng_state = json.loads(r.str())
    step = r.u64()
    if r.pos != len(raw):
        raise ValueError(f"{path}: trailing bytes after checkpoint")
    return Checkpoint(kind, config, params, adam_step, m, v, rng_state, step)


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes(), path)


def from_trainer(trainer, config: dict) -> Checkpoint:
    names: List[str] = list(trainer.model.params)
    st = trainer.opt.state
    m = dict(zip(names, st["m"])) if "m" in st else {}
    v = dict(zip(names, st["v"])) if "v" in st else {}
    return Checkpoint(
        kind=trainer.kind,
        config=config,
        params=trainer.model.state_arrays(),
        adam_step=int(st.get("step", 0)),
        adam_m=m,
        adam_v=v,
        rng_state=trainer.rng.bit_generator.state,
        step=trainer.step,
    )


def restore_trainer(trainer, ckpt: Checkpoint) -> None:
    """Load parameters, optimizer moments, RNG state and step counter into ``trainer``."""
    trainer.model.load_arrays(ckpt.params)
    names = list(trainer.model.params)
    if ckpt.adam_m:
        trainer.opt.state = {
            "step": ckpt.adam_step,
            "m": [np.array(ckpt.adam_m[n], dtype=trainer.model.dtype) for n in names],
            "v": [np.array(ckpt.adam_v[n], dtype=trainer.model.dtype) for n in names],
        }
    else:
        trainer.opt.state = {}
    if ckpt.rng_state:
        trainer.rng.bit_generator.state = ckpt.rng_state
    trainer.step = ckpt.step
