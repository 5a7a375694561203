"""Per-frame position fixes from homography estimates.

The frame is projected onto the basemap as a quadrilateral; its uniform-
density area centroid (shoelace first moment over area, not the mean of
the four vertices — the two differ for non-parallelogram quads) is the
platform position in basemap pixels, which then converts to WGS84.

geolocate_frame is a total function: every failure mode along the chain
collapses into a NoFix status, never an exception, so one bad frame cannot
abort a sequence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .errors import DegenerateQuad, GeofixError
from .geodesy import GeoPoint, GeoTransform, PixelPoint, pixel_to_gps
from .gisfilter import FilterBranch, FilterConfig, LabeledMatchSet, label_matches, select_valid, union_pairs
from .homography import Homography, RansacConfig, apply, ransac_estimate
from .mask import GisMask
from .matching import MatchSet

log = logging.getLogger(__name__)

Quad = tuple[PixelPoint, PixelPoint, PixelPoint, PixelPoint]

_MIN_QUAD_AREA_PX2 = 1.0


class FixStatus(Enum):
    OK = "Ok"
    NO_FIX = "NoFix"


@dataclass(frozen=True)
class GeoFix:
    """One frame's localization outcome."""

    frame_id: int
    status: FixStatus
    position: GeoPoint | None = None
    quad: Quad | None = None
    branch: FilterBranch | None = None
    n_valid_matches: int = 0
    mean_reprojection_px: float | None = None
    reason: str | None = None  # failure note for NoFix frames


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered fixes; frame ids strictly increasing."""

    fixes: tuple[GeoFix, ...]

    def __post_init__(self) -> None:
        ids = [f.frame_id for f in self.fixes]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("trajectory frame_ids must be strictly increasing")

    def __len__(self) -> int:
        return len(self.fixes)

    @property
    def ok_fixes(self) -> tuple[GeoFix, ...]:
        return tuple(f for f in self.fixes if f.status is FixStatus.OK)


def project_frame(h: Homography, frame_w: int, frame_h: int, window_origin: PixelPoint) -> Quad:
    """Project the frame's corners onto the full basemap.

    Corner order (0,0), (w,0), (w,h), (0,h) is preserved. Raises
    DegenerateQuad when the projection self-intersects or collapses below
    1 px^2, and propagates PointAtInfinity from the corner transforms.
    """
    corners = (
        PixelPoint(0.0, 0.0),
        PixelPoint(float(frame_w), 0.0),
        PixelPoint(float(frame_w), float(frame_h)),
        PixelPoint(0.0, float(frame_h)),
    )
    projected = []
    for c in corners:
        p = apply(h, c)
        projected.append(PixelPoint(p.u + window_origin.u, p.v + window_origin.v))
    quad = tuple(projected)
    if _self_intersects(quad):
        raise DegenerateQuad("projected frame quadrilateral self-intersects")
    if abs(_signed_area(quad)) < _MIN_QUAD_AREA_PX2:
        raise DegenerateQuad("projected frame quadrilateral has near-zero area")
    return quad


def centroid(quad: Sequence[PixelPoint]) -> PixelPoint:
    """Area centroid of a simple polygon via the shoelace first moment."""
    if _self_intersects(tuple(quad)):
        raise DegenerateQuad("centroid of a self-intersecting quadrilateral is undefined")
    area2 = _signed_area(quad) * 2.0
    if abs(area2) < 1e-12:
        raise DegenerateQuad("polygon area is zero")
    cx = 0.0
    cy = 0.0
    n = len(quad)
    for i in range(n):
        a = quad[i]
        b = quad[(i + 1) % n]
        cross = a.u * b.v - b.u * a.v
        cx += (a.u + b.u) * cross
        cy += (a.v + b.v) * cross
    return PixelPoint(cx / (3.0 * area2), cy / (3.0 * area2))


def _signed_area(quad: Sequence[PixelPoint]) -> float:
    total = 0.0
    n = len(quad)
    for i in range(n):
        a = quad[i]
        b = quad[(i + 1) % n]
        total += a.u * b.v - b.u * a.v
    return total / 2.0


def _segments_cross(p1: PixelPoint, p2: PixelPoint, p3: PixelPoint, p4: PixelPoint) -> bool:
    """Proper intersection test of open segments p1p2 and p3p4."""

    def orient(a: PixelPoint, b: PixelPoint, c: PixelPoint) -> float:
        return (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u)

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _self_intersects(quad: Sequence[PixelPoint]) -> bool:
    # a quadrilateral is non-simple iff one of the two opposite-edge pairs crosses
    return _segments_cross(quad[0], quad[1], quad[2], quad[3]) or _segments_cross(
        quad[1], quad[2], quad[3], quad[0]
    )


def geolocate_frame(
    frame_id: int,
    matches: MatchSet,
    mask: GisMask,
    transform: GeoTransform,
    frame_size: tuple[int, int],
    filter_cfg: FilterConfig,
    ransac_cfg: RansacConfig,
    *,
    use_gis_filter: bool = True,
) -> GeoFix:
    """Run the full per-frame chain; always returns a GeoFix, never raises.

    labels -> selects (or keeps all when the filter is disabled) -> robust
    homography -> corner projection -> area centroid -> WGS84.
    """
    labeled = label_matches(matches, mask)
    if use_gis_filter:
        valid, branch = select_valid(labeled, filter_cfg)
    else:
        valid, branch = union_pairs(labeled), None
    try:
        estimate = ransac_estimate(valid, ransac_cfg)
        quad = project_frame(estimate.h, frame_size[0], frame_size[1], matches.window_origin)
        center = centroid(quad)
        position = pixel_to_gps(center, transform)
    except GeofixError as exc:
        log.info("frame %d: no fix (%s)", frame_id, exc)
        return GeoFix(
            frame_id=frame_id,
            status=FixStatus.NO_FIX,
            branch=branch,
            n_valid_matches=len(valid),
            reason=f"{type(exc).__name__}: {exc}",
        )
    except ValueError as exc:  # out-of-range lat/lon from a wild projection
        log.info("frame %d: no fix (%s)", frame_id, exc)
        return GeoFix(
            frame_id=frame_id,
            status=FixStatus.NO_FIX,
            branch=branch,
            n_valid_matches=len(valid),
            reason=f"ValueError: {exc}",
        )
    return GeoFix(
        frame_id=frame_id,
        status=FixStatus.OK,
        position=position,
        quad=quad,
        branch=branch,
        n_valid_matches=len(valid),
        mean_reprojection_px=estimate.mean_reprojection_px,
    )
