"""Binary ground/building raster aligned with the basemap.

Rasterization rule: a pixel is building iff its center lies inside any
footprint under the even-odd rule (holes subtract within a footprint;
overlapping footprints union). Pixel centers sit on integer continuous
coordinates (see geodesy). Points exactly on an edge resolve by the
half-open convention: top and left boundaries inclusive, bottom and right
exclusive, which keeps the fill deterministic.

Building heights are deliberately ignored; the mask is a flat two-class
layer.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .footprints import BuildingFootprint
from .geodesy import GeoTransform, PixelPoint, gps_to_pixel


class PixelClass(Enum):
    GROUND = 0
    BUILDING = 1


@dataclass(frozen=True)
class GisMask:
    """Write-once class raster: bits[v, u] is True where a building stands."""

    bits: np.ndarray  # bool, shape (height, width)

    def __post_init__(self) -> None:
        if self.bits.ndim != 2 or self.bits.dtype != np.bool_:
            raise ValueError("mask bits must be a 2-D bool array")
        self.bits.setflags(write=False)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def building_pixel_count(self) -> int:
        return int(self.bits.sum())


def classify(p: PixelPoint, m: GisMask) -> PixelClass:
    """Class of the pixel containing p (floor of coordinates).

    Points outside the raster classify as Ground: the filter only needs
    building flags to protect coplanarity, and unknown terrain is more
    likely ground than roof.
    """
    u = math.floor(p.u)
    v = math.floor(p.v)
    if 0 <= u < m.width and 0 <= v < m.height:
        return PixelClass.BUILDING if m.bits[v, u] else PixelClass.GROUND
    return PixelClass.GROUND


def rasterize(footprints: Iterable[BuildingFootprint], t: GeoTransform) -> GisMask:
    """Rasterize footprints into a class mask at basemap resolution."""
    bits = np.zeros((t.height, t.width), dtype=np.bool_)
    for fp in footprints:
        rings = [fp.outer_ring, *fp.holes]
        pixel_rings = [
            [gps_to_pixel(g, t) for g in ring]
            for ring in rings
        ]
        _fill_even_odd(bits, pixel_rings)
    return GisMask(bits)


def _fill_even_odd(bits: np.ndarray, rings: Sequence[Sequence[PixelPoint]]) -> None:
    """OR one footprint's even-odd interior into bits (scanline fill)."""
    height, width = bits.shape
    edges = []
    for ring in rings:
        n = len(ring)
        for i in range(n):
            a, b = ring[i], ring[(i + 1) % n]
            if a.v != b.v:  # horizontal edges never cross a scanline half-open in y
                edges.append((a.u, a.v, b.u, b.v))
    if not edges:
        return
    e = np.asarray(edges, dtype=np.float64)
    x1, y1, x2, y2 = e[:, 0], e[:, 1], e[:, 2], e[:, 3]
    y_lo = np.minimum(y1, y2)
    y_hi = np.maximum(y1, y2)

    v_min = max(0, math.ceil(float(y_lo.min())))
    v_max = min(height - 1, math.floor(float(y_hi.max())))
    for v in range(v_min, v_max + 1):
        hit = (y_lo <= v) & (v < y_hi)  # half-open: top inclusive, bottom exclusive
        if not hit.any():
            continue
        tt = (v - y1[hit]) / (y2[hit] - y1[hit])
        xs = np.sort(x1[hit] + tt * (x2[hit] - x1[hit]))
        for k in range(0, len(xs) - 1, 2):
            u_start = max(0, math.ceil(xs[k]))  # left inclusive
            u_end = min(width - 1, math.ceil(xs[k + 1]) - 1)  # right exclusive
            if u_start <= u_end:
                bits[v, u_start : u_end + 1] = True


_RLE_MAGIC = b"GMSK1"


def save_pgm(m: GisMask, path: str | Path) -> None:
    """Export as binary PGM (P5): 0 = ground, 255 = building."""
    payload = np.where(m.bits, 255, 0).astype(np.uint8)
    header = f"P5\n{m.width} {m.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + payload.tobytes())


def save_rle(m: GisMask, path: str | Path) -> None:
    """Export the compact run-length sidecar.

    Layout: magic "GMSK1", width u32 LE, height u32 LE, then (run_length
    u32 LE, class_value u32 LE) pairs covering the row-major flattened
    raster.
    """
    flat = m.bits.ravel().astype(np.uint8)
    # run boundaries wherever the value changes
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    out = bytearray(_RLE_MAGIC)
    out += struct.pack("<II", m.width, m.height)
    for s, e in zip(starts, ends):
        out += struct.pack("<II", int(e - s), int(flat[s]))
    Path(path).write_bytes(bytes(out))


def load_rle(path: str | Path) -> GisMask:
    """Read a GMSK1 sidecar back into a mask."""
    raw = Path(path).read_bytes()
    if raw[: len(_RLE_MAGIC)] != _RLE_MAGIC:
        raise ValueError(f"{path}: not a GMSK1 mask sidecar")
    width, height = struct.unpack_from("<II", raw, len(_RLE_MAGIC))
    offset = len(_RLE_MAGIC) + 8
    runs = np.frombuffer(raw, dtype="<u4", offset=offset).reshape(-1, 2)
    flat = np.repeat(runs[:, 1].astype(np.uint8), runs[:, 0])
    if flat.size != width * height:
        raise ValueError(f"{path}: run lengths cover {flat.size} pixels, expected {width * height}")
    return GisMask(flat.reshape(height, width).astype(np.bool_))
