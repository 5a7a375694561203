"""WGS84 <-> basemap pixel conversions and metric distances.

Conventions used throughout the package:

* Basemaps are north-up: rows increase due south, columns due east.
* The georeference anchor is the *center* of pixel (0, 0), so continuous
  pixel coordinate (0.0, 0.0) sits exactly on the anchor. Pixel centers
  lie on integer coordinates.
* Georeferencing is a local tangent-plane (equirectangular) model with the
  longitude scale fixed at the anchor latitude. For basemaps up to a few
  kilometers across, the approximation error is far below the ±2.5 m
  accuracy of consumer GPS ground truth. Full map-projection math is
  deliberately out of scope.
* All metric math lives on a sphere of radius 6,371,000 m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigInvalid

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 coordinate in degrees. lat in [-90, 90], lon in [-180, 180)."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon < 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180)")


@dataclass(frozen=True)
class PixelPoint:
    """Continuous pixel coordinate: u = column, v = row.

    May lie outside the raster bounds; homography projections routinely do.
    """

    u: float
    v: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError(f"non-finite pixel coordinate ({self.u}, {self.v})")


@dataclass(frozen=True)
class GeoTransform:
    """Georeference of a north-up basemap raster.

    anchor: GeoPoint at the center of pixel (0, 0).
    gsd: ground sample distance, meters per pixel, > 0.
    width, height: raster size in pixels.
    """

    anchor: GeoPoint
    gsd: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gsd) and self.gsd > 0):
            raise ValueError(f"gsd must be > 0, got {self.gsd}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"raster size {self.width}x{self.height} invalid")

    @property
    def lon_scale(self) -> float:
        """Meters per degree longitude at the anchor latitude."""
        return METERS_PER_DEG_LAT * math.cos(math.radians(self.anchor.lat))

    def contains(self, p: PixelPoint) -> bool:
        return 0 <= p.u < self.width and 0 <= p.v < self.height


def pixel_to_gps(p: PixelPoint, t: GeoTransform) -> GeoPoint:
    """Convert a continuous pixel coordinate to WGS84.

    Out-of-raster pixels convert normally; the transform extends the
    tangent plane beyond the raster edges.
    """
    lat = t.anchor.lat - (p.v * t.gsd) / METERS_PER_DEG_LAT
    lon = t.anchor.lon + (p.u * t.gsd) / t.lon_scale
    return GeoPoint(lat, lon)


def gps_to_pixel(g: GeoPoint, t: GeoTransform) -> PixelPoint:
    """Exact inverse of pixel_to_gps under the same tangent-plane model."""
    v = (t.anchor.lat - g.lat) * METERS_PER_DEG_LAT / t.gsd
    u = (g.lon - t.anchor.lon) * t.lon_scale / t.gsd
    return PixelPoint(u, v)


def geodesic_distance_m(a: GeoPoint, b: GeoPoint) -> float:
    """Haversine great-circle distance in meters on the R=6371 km sphere."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def save_world_file(path: str | Path, t: GeoTransform) -> None:
    """Write the 4-line sidecar world file for a basemap raster.

    Lines: anchor_lat, anchor_lon, gsd_m_per_px, "north_up". Raster
    dimensions travel with the raster itself, not the sidecar.
    """
    text = f"{t.anchor.lat!r}\n{t.anchor.lon!r}\n{t.gsd!r}\nnorth_up\n"
    Path(path).write_text(text)


def load_world_file(path: str | Path, width: int, height: int) -> GeoTransform:
    """Read a 4-line world file and pair it with known raster dimensions."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 4:
        raise ConfigInvalid(f"world file {path}: expected 4 lines, got {len(lines)}")
    try:
        lat = float(lines[0])
        lon = float(lines[1])
        gsd = float(lines[2])
    except ValueError as exc:
        raise ConfigInvalid(f"world file {path}: {exc}") from exc
    if lines[3].strip() != "north_up":
        raise ConfigInvalid(
            f"world file {path}: orientation {lines[3]!r} unsupported (only north_up)"
        )
    try:
        return GeoTransform(GeoPoint(lat, lon), gsd, width, height)
    except ValueError as exc:
        raise ConfigInvalid(f"world file {path}: {exc}") from exc
