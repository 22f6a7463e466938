"""Biot-Savart simulation of Bz scan maps above IC power-short scenes.

Scenes are synthetic stand-ins for real scans: a die with pads on a routing
perimeter, a Manhattan-routed supply trace from the active pad to the short,
and a closed return loop along the perimeter on a deeper layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

MU0 = 4e-7 * np.pi
_EXCLUSION = 1e-12

DEFECT_KINDS = ("intra_plane_short", "inter_plane_short")


@dataclass(frozen=True)
class CurrentSegment:
    """Straight conductor from p0 to p1 (meters) carrying ``current`` amperes p0 -> p1."""

    p0: Tuple[float, float, float]
    p1: Tuple[float, float, float]
    current: float

    def __post_init__(self):
        if tuple(self.p0) == tuple(self.p1):
            raise ValueError("segment endpoints coincide")
        if not np.isfinite(self.current):
            raise ValueError("segment current must be finite")

    def scaled(self, factor: float) -> "CurrentSegment":
        return CurrentSegment(self.p0, self.p1, self.current * factor)


@dataclass
class DefectScene:
    die_extent: Tuple[float, float]
    pins: List[Tuple[float, float]]
    path: List[CurrentSegment]
    pin_config_id: int = 0
    offset: Tuple[float, float] = (0.0, 0.0)
    defect_kind: str = "intra_plane_short"
    short_location: Tuple[float, float] = (0.0, 0.0)

    def scaled(self, factor: float) -> "DefectScene":
        return DefectScene(
            self.die_extent,
            list(self.pins),
            [s.scaled(factor) for s in self.path],
            self.pin_config_id,
            self.offset,
            self.defect_kind,
            self.short_location,
        )

    def to_dict(self) -> dict:
        return {
            "die_extent": list(self.die_extent),
            "pins": [list(p) for p in self.pins],
            "path": [{"p0": list(s.p0), "p1": list(s.p1), "current": s.current} for s in self.path],
            "pin_config_id": self.pin_config_id,
            "offset": list(self.offset),
            "defect_kind": self.defect_kind,
            "short_location": list(self.short_location),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DefectScene":
        return cls(
            die_extent=tuple(d["die_extent"]),
            pins=[tuple(p) for p in d["pins"]],
            path=[CurrentSegment(tuple(s["p0"]), tuple(s["p1"]), s["current"]) for s in d["path"]],
            pin_config_id=d["pin_config_id"],
            offset=tuple(d["offset"]),
            defect_kind=d["defect_kind"],
            short_location=tuple(d["short_location"]),
        )


@dataclass
class FieldMap:
    """Bz in tesla on an H x W grid of pixel centers."""

    values: np.ndarray
    pitch: float
    scan_height: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        h, w = self.values.shape
        if h < 8 or w < 8:
            raise ValueError(f"field map must be at least 8x8, got {h}x{w}")
        if self.pitch <= 0 or self.scan_height <= 0:
            raise ValueError("pitch and scan_height must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field map contains non-finite values")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


def segment_bz(seg: CurrentSegment, obs) -> np.ndarray:
    """z-component of the field of a finite straight segment at points ``obs`` (..., 3).

    Uses the closed form B = mu0 I/(4 pi) (dl x a)/|dl x a|^2 (dl.a/|a| - dl.b/|b|),
    with a = obs - p0 and b = obs - p1.
    """
    obs = np.asarray(obs, dtype=np.float64)
    p0 = np.asarray(seg.p0, dtype=np.float64)
    p1 = np.asarray(seg.p1, dtype=np.float64)
    dl = p1 - p0
    a = obs - p0
    b = obs - p1
    cross = np.cross(dl, a)
    cross2 = np.einsum("...i,...i->...", cross, cross)
    dl_norm = np.linalg.norm(dl)
    dist = np.sqrt(cross2) / dl_norm
    if np.any(dist < _EXCLUSION):
        raise ValueError("observation point lies on the segment line (singular Biot-Savart kernel)")
    if seg.current == 0:
        return np.zeros(obs.shape[:-1])
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    proj = a @ dl / na - b @ dl / nb
    return MU0 * seg.current / (4 * np.pi) * cross[..., 2] / cross2 * proj


def scan_points(h: int, w: int, pitch: float, scan_height: float) -> np.ndarray:
    """Pixel-center observation points; row index is y, column index is x."""
    ys = (np.arange(h) + 0.5) * pitch
    xs = (np.arange(w) + 0.5) * pitch
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy, np.full_like(gx, scan_height)], axis=-1)


def render_scene(scene: DefectScene, h: int = 64, w: int = 64, pitch: float = 100e-6,
                 scan_height: float = 300e-6) -> FieldMap:
    lx, ly = scene.die_extent
    if lx > w * pitch * (1 + 1e-9) or ly > h * pitch * (1 + 1e-9):
        raise ValueError("scan grid does not cover the die extent")
    pts = scan_points(h, w, pitch, scan_height)
    bz = np.zeros((h, w))
    ox, oy = scene.offset
    for seg in scene.path:
        moved = CurrentSegment(
            (seg.p0[0] + ox, seg.p0[1] + oy, seg.p0[2]),
            (seg.p1[0] + ox, seg.p1[1] + oy, seg.p1[2]),
            seg.current,
        )
        bz += segment_bz(moved, pts)
    meta = {
        "pin_config_id": scene.pin_config_id,
        "offset": list(scene.offset),
        "defect_kind": scene.defect_kind,
    }
    return FieldMap(bz, pitch, scan_height, meta)


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------

def _polyline(points: Sequence[Tuple[float, float, float]], current: float) -> List[CurrentSegment]:
    segs = []
    for p, q in zip(points[:-1], points[1:]):
        if tuple(p) != tuple(q):
            segs.append(CurrentSegment(tuple(p), tuple(q), current))
    return segs


def _manhattan(p, q, z: float, x_first: bool) -> List[Tuple[float, float, float]]:
    corner = (q[0], p[1]) if x_first else (p[0], q[1])
    return [(p[0], p[1], z), (corner[0], corner[1], z), (q[0], q[1], z)]


def _perimeter_pos(pt, box) -> float:
    """Arc-length position of a point on the box boundary, counter-clockwise from (x0, y0)."""
    x0, y0, x1, y1 = box
    x, y = pt
    w, h = x1 - x0, y1 - y0
    if np.isclose(y, y0):
        return x - x0
    if np.isclose(x, x1):
        return w + (y - y0)
    if np.isclose(y, y1):
        return w + h + (x1 - x)
    return 2 * w + h + (y1 - y)


def _perimeter_route(p, q, box, z: float) -> List[Tuple[float, float, float]]:
    """Walk the box boundary from p to q the short way round, visiting corners."""
    x0, y0, x1, y1 = box
    total = 2 * ((x1 - x0) + (y1 - y0))
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    cpos = [_perimeter_pos(c, box) for c in corners]
    sp, sq = _perimeter_pos(p, box), _perimeter_pos(q, box)
    fwd = (sq - sp) % total
    pts = [p]
    if fwd <= total - fwd:
        between = sorted((((c - sp) % total, corner) for c, corner in zip(cpos, corners)))
        pts += [corner for d, corner in between if 0 < d < fwd]
    else:
        between = sorted((((sp - c) % total, corner) for c, corner in zip(cpos, corners)))
        pts += [corner for d, corner in between if 0 < d < total - fwd]
    pts.append(q)
    return [(x, y, z) for x, y in pts]


@dataclass(frozen=True)
class SceneGeometry:
    """Knobs for the synthetic scene generator (lengths in meters)."""

    grid: int = 64
    pitch: float = 100e-6
    routing_margin: float = 0.25
    plane_gap: float = 50e-6
    return_depth: float = 1.5e-3
    current: float = 0.05
    offset_step: int = 3

    @property
    def die_extent(self) -> Tuple[float, float]:
        side = self.grid * self.pitch
        return (side, side)


def _pads(box, count: int, pitch: float) -> List[Tuple[float, float]]:
    """``count`` pads spread counter-clockwise around the routing box, snapped to pixel corners."""
    x0, y0, x1, y1 = box
    total = 2 * ((x1 - x0) + (y1 - y0))
    pads = []
    for k in range(count):
        s = (k + 0.5) * total / count
        w, h = x1 - x0, y1 - y0
        if s < w:
            p = (x0 + s, y0)
        elif s < w + h:
            p = (x1, y0 + s - w)
        elif s < 2 * w + h:
            p = (x1 - (s - w - h), y1)
        else:
            p = (x0, y1 - (s - 2 * w - h))
        pads.append((round(p[0] / pitch) * pitch, round(p[1] / pitch) * pitch))
    return pads


def _offsets(count: int, step: float) -> List[Tuple[float, float]]:
    base = [(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)]
    out = []
    ring = 1
    while len(out) < count:
        for dx, dy in base:
            cand = (0.0, 0.0) if (dx, dy) == (0, 0) else (dx * ring * step, dy * ring * step)
            if cand not in out:
                out.append(cand)
            if len(out) == count:
                break
        ring += 1
    return out


def build_scene_path(pins, source: int, ground: int, short, box, kind: str, geo: SceneGeometry,
                     x_first: bool) -> List[CurrentSegment]:
    """Closed loop: source pad -> short -> ground pad -> perimeter return -> source pad."""
    src, gnd = pins[source], pins[ground]
    zr = -geo.return_depth
    if kind == "intra_plane_short":
        pts = _manhattan(src, short, 0.0, x_first) + _manhattan(short, gnd, 0.0, not x_first)[1:]
        pts.append((gnd[0], gnd[1], zr))
    elif kind == "inter_plane_short":
        zg = -geo.plane_gap
        pts = _manhattan(src, short, 0.0, x_first)
        pts += _manhattan(short, gnd, zg, not x_first)
        pts.append((gnd[0], gnd[1], zr))
    else:
        raise ValueError(f"unknown defect kind {kind!r}")
    pts += _perimeter_route(gnd, src, box, zr)[1:]
    pts.append((src[0], src[1], 0.0))
    return _polyline(pts, geo.current)


def generate_scenes(n_samples: int, pin_configs: int, offsets: int, seed: int,
                    geometry: SceneGeometry = SceneGeometry()) -> List[DefectScene]:
    """``n_samples`` base defects, each emitted under every pin configuration and offset."""
    if min(n_samples, pin_configs, offsets) < 1:
        raise ValueError("n_samples, pin_configs and offsets must all be >= 1")
    rng = np.random.default_rng(seed)
    lx, ly = geometry.die_extent
    m = geometry.routing_margin
    box = (m * lx, m * ly, (1 - m) * lx, (1 - m) * ly)
    n_pads = pin_configs + 1
    pins = _pads(box, n_pads, geometry.pitch)
    offs = _offsets(offsets, geometry.offset_step * geometry.pitch)
    # short sits inside the routing box, inset by a further margin
    inset = 0.15
    scenes = []
    for _ in range(n_samples):
        sx = rng.uniform(box[0] + inset * (box[2] - box[0]), box[2] - inset * (box[2] - box[0]))
        sy = rng.uniform(box[1] + inset * (box[3] - box[1]), box[3] - inset * (box[3] - box[1]))
        kind = DEFECT_KINDS[int(rng.integers(len(DEFECT_KINDS)))]
        x_first = bool(rng.integers(2))
        ground = n_pads - 1
        for cfg in range(pin_configs):
            path = build_scene_path(pins, cfg, ground, (sx, sy), box, kind, geometry, x_first)
            for off in offs:
                scenes.append(
                    DefectScene(
                        die_extent=(lx, ly),
                        pins=list(pins),
                        path=path,
                        pin_config_id=cfg,
                        offset=off,
                        defect_kind=kind,
                        short_location=(sx, sy),
                    )
                )
    return scenes
