"""Shared fixtures: a campus-scale transform and masks with known geometry."""

import numpy as np
import pytest

from geofix.footprints import BuildingFootprint
from geofix.geodesy import GeoPoint, GeoTransform, PixelPoint, pixel_to_gps
from geofix.mask import GisMask, rasterize


@pytest.fixture
def transform() -> GeoTransform:
    """800x800 px basemap at 0.15 m/px anchored near (40 N, 83 W)."""
    return GeoTransform(anchor=GeoPoint(40.0, -83.0), gsd=0.15, width=800, height=800)


def square_footprint(
    t: GeoTransform, u_min: float, v_min: float, u_max: float, v_max: float, tag: str = "sq"
) -> BuildingFootprint:
    """Axis-aligned square footprint defined by pixel-space corners."""
    corners = [
        PixelPoint(u_min, v_min),
        PixelPoint(u_max, v_min),
        PixelPoint(u_max, v_max),
        PixelPoint(u_min, v_max),
    ]
    return BuildingFootprint(tuple(pixel_to_gps(c, t) for c in corners), (), tag)


@pytest.fixture
def square_mask(transform) -> GisMask:
    """Mask with one building square covering pixel centers [300, 380)^2."""
    fp = square_footprint(transform, 299.5, 299.5, 379.5, 379.5)
    return rasterize([fp], transform)


def point_in_ring_pixel(u: float, v: float, ring: np.ndarray) -> bool:
    """Brute-force even-odd ray cast in pixel space (test oracle).

    ring: (N, 2) array of (u, v) vertices, implicitly closed.
    """
    inside = False
    n = ring.shape[0]
    for i in range(n):
        u1, v1 = ring[i]
        u2, v2 = ring[(i + 1) % n]
        if (v1 > v) != (v2 > v):
            u_cross = u1 + (v - v1) / (v2 - v1) * (u2 - u1)
            if u < u_cross:
                inside = not inside
    return inside
