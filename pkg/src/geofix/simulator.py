"""Synthetic flight generation with exact ground truth.

Frames are sampled along a waypoint polyline at a fixed metric step. Each
frame carries its true position and the true frame-to-basemap transform
(translation plus optional small scale/rotation jitter about the frame
center), so every downstream quantity has a closed-form reference value.
Raster crops are optional: the match-level path exercises all of the
estimation math without any image content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import WaypointOutsideBasemap
from .geodesy import GeoPoint, GeoTransform, PixelPoint, gps_to_pixel, pixel_to_gps
from .homography import Homography
from .mask import GisMask
from .matching import MatchSet, synthetic_matches


@dataclass(frozen=True)
class SimFlight:
    """Flight plan: polyline waypoints sampled every step_m meters."""

    waypoints: tuple[GeoPoint, ...]
    frame_size: tuple[int, int] = (512, 512)
    step_m: float = 3.0
    scale_jitter: float = 0.0  # max relative scale deviation, keep <= 0.02
    rot_jitter_deg: float = 0.0  # max |rotation|, keep sub-degree
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise ValueError("flight needs at least one waypoint")
        if not self.step_m > 0:
            raise ValueError("step_m must be > 0")
        if self.scale_jitter < 0 or self.rot_jitter_deg < 0:
            raise ValueError("jitter magnitudes must be >= 0")


@dataclass(frozen=True)
class SimFrame:
    """One simulated frame with exact ground truth."""

    frame_id: int
    gt_position: GeoPoint
    gt_h: Homography  # frame -> full basemap
    frame_size: tuple[int, int]
    raster: np.ndarray | None = None


@dataclass(frozen=True)
class MatchNoiseConfig:
    """Corruption model for synthetic correspondences."""

    n_ground: int = 100
    n_building: int = 0
    noise_px: float = 0.0
    outlier_frac: float = 0.0
    parallax_px: float = 0.0
    seed: int = 0


def generate_flight(
    flight: SimFlight, t: GeoTransform, basemap: np.ndarray | None = None
) -> list[SimFrame]:
    """Sample frames along the flight polyline.

    Returns floor(length / step) + 1 frames at arc-length multiples of
    step_m, endpoints included when they fall on the grid. Deterministic
    given flight.seed; per-frame jitter streams are derived from
    (seed, frame index) so frames are independent of each other.

    Raises:
        WaypointOutsideBasemap: a waypoint falls off the raster.
    """
    pix = []
    for wp in flight.waypoints:
        p = gps_to_pixel(wp, t)
        if not t.contains(p):
            raise WaypointOutsideBasemap(f"waypoint ({wp.lat}, {wp.lon}) -> ({p.u:.1f}, {p.v:.1f}) outside raster")
        pix.append(np.array([p.u, p.v]))

    step_px = flight.step_m / t.gsd
    centers = _sample_polyline(pix, step_px)

    w, h = flight.frame_size
    frames = []
    for k, (cu, cv) in enumerate(centers):
        rng = np.random.default_rng(np.random.SeedSequence([flight.seed, k]))
        scale = 1.0 + (rng.uniform(-flight.scale_jitter, flight.scale_jitter) if flight.scale_jitter else 0.0)
        angle = np.radians(rng.uniform(-flight.rot_jitter_deg, flight.rot_jitter_deg)) if flight.rot_jitter_deg else 0.0
        gt_h = _pose_homography(cu, cv, w, h, scale, angle)
        raster = _render_crop(basemap, gt_h, flight.frame_size) if basemap is not None else None
        frames.append(
            SimFrame(
                frame_id=k,
                gt_position=pixel_to_gps(PixelPoint(float(cu), float(cv)), t),
                gt_h=gt_h,
                frame_size=flight.frame_size,
                raster=raster,
            )
        )
    return frames


def emit_matches(frame: SimFrame, mask: GisMask, cfg: MatchNoiseConfig) -> MatchSet:
    """Synthetic correspondences for one frame under the noise model.

    The per-frame seed derives from (cfg.seed, frame_id): sequences are
    reproducible end-to-end while frames stay mutually independent.
    """
    seed = int(np.random.SeedSequence([cfg.seed, frame.frame_id]).generate_state(1)[0])
    return synthetic_matches(
        frame.gt_h,
        mask,
        n_ground=cfg.n_ground,
        n_building=cfg.n_building,
        noise_px=cfg.noise_px,
        outlier_frac=cfg.outlier_frac,
        parallax_px=cfg.parallax_px,
        seed=seed,
        frame_size=frame.frame_size,
    )


def _sample_polyline(points: list[np.ndarray], step: float) -> list[tuple[float, float]]:
    """Points every `step` units of arc length along the polyline, start included."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 1:
        return [(float(pts[0, 0]), float(pts[0, 1]))]
    seg = np.diff(pts, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    # tiny epsilon so a length that is an exact multiple of step keeps its endpoint
    n_samples = int(np.floor(cum[-1] / step + 1e-9)) + 1
    targets = np.arange(n_samples) * step
    us = np.interp(targets, cum, pts[:, 0])
    vs = np.interp(targets, cum, pts[:, 1])
    return list(zip(us.tolist(), vs.tolist()))


def _pose_homography(cu: float, cv: float, w: int, h: int, scale: float, angle: float) -> Homography:
    """Translation-to-center composed with scale/rotation about the frame center."""
    to_origin = np.array([[1.0, 0.0, -w / 2.0], [0.0, 1.0, -h / 2.0], [0.0, 0.0, 1.0]])
    c, s = np.cos(angle), np.sin(angle)
    rot_scale = np.array([[scale * c, -scale * s, 0.0], [scale * s, scale * c, 0.0], [0.0, 0.0, 1.0]])
    to_center = np.array([[1.0, 0.0, cu], [0.0, 1.0, cv], [0.0, 0.0, 1.0]])
    return Homography.from_matrix(to_center @ rot_scale @ to_origin)


def _render_crop(basemap: np.ndarray, gt_h: Homography, frame_size: tuple[int, int]) -> np.ndarray:
    """Bilinear-sample the basemap at the projected frame grid."""
    w, h = frame_size
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    ones = np.ones_like(uu)
    pts = np.stack([uu.ravel(), vv.ravel(), ones.ravel()])
    proj = gt_h.matrix @ pts
    us = proj[0] / proj[2]
    vs = proj[1] / proj[2]
    sampled = ndimage.map_coordinates(
        basemap.astype(np.float64), np.stack([vs, us]), order=1, mode="constant", cval=0.0
    )
    return np.clip(sampled.reshape(h, w), 0, 255).astype(np.uint8)
