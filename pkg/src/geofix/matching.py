"""Frame-to-basemap keypoint correspondence backends.

Every backend answers ``match(frame, window, min_confidence)`` behind one
interface, so the pipeline does not care whether matches come from the
built-in classical matcher, a test stub, or an external neural matcher
process.

External matcher wire protocol (line-delimited JSON over stdio):

    request:  {"id": int, "frame_png_b64": str, "window_png_b64": str,
               "min_confidence": float}
    response: {"id": int, "matches": [[u_img, v_img, u_map, v_map, conf], ...]}
           or {"id": int, "error": str}

One response line per request line, in order. Images travel as base64 PNG
(8-bit grayscale).
"""

from __future__ import annotations

import base64
import io
import json
import math
import subprocess
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage, signal

from .errors import BackendUnavailable, InsufficientClassPixels, MatchFailed
from .geodesy import PixelPoint
from .homography import Homography, apply
from .mask import GisMask


@dataclass(frozen=True)
class MatchPair:
    """One keypoint correspondence with a confidence score in [0, 1]."""

    image_pt: PixelPoint
    basemap_pt: PixelPoint
    confidence: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class MatchSet:
    """Correspondences between a frame and a basemap window.

    basemap_pt coordinates are window-relative; add window_origin to get
    full-basemap coordinates.
    """

    pairs: tuple[MatchPair, ...]
    window_origin: PixelPoint = PixelPoint(0.0, 0.0)

    def __len__(self) -> int:
        return len(self.pairs)

    def image_points(self) -> np.ndarray:
        return np.array([(p.image_pt.u, p.image_pt.v) for p in self.pairs]).reshape(-1, 2)

    def full_basemap_points(self) -> np.ndarray:
        pts = np.array([(p.basemap_pt.u, p.basemap_pt.v) for p in self.pairs]).reshape(-1, 2)
        return pts + np.array([self.window_origin.u, self.window_origin.v])

    def with_origin(self, origin: PixelPoint) -> "MatchSet":
        return replace(self, window_origin=origin)


def _check_match_args(frame: np.ndarray, window: np.ndarray, min_confidence: float) -> None:
    for name, raster in (("frame", frame), ("window", window)):
        if raster.ndim != 2 or raster.size == 0:
            raise ValueError(f"{name} must be a non-empty 2-D grayscale raster")
    if not 0.0 <= min_confidence <= 1.0:
        raise ValueError(f"min_confidence {min_confidence} outside [0, 1]")


class MatcherBackend(ABC):
    """Interface every matcher implements.

    deterministic backends return identical MatchSets for identical inputs;
    the pipeline serializes calls to backends that declare single_flight.
    """

    identity: str = "abstract"
    deterministic: bool = False
    single_flight: bool = False

    @abstractmethod
    def match(self, frame: np.ndarray, window: np.ndarray, min_confidence: float) -> MatchSet:
        """Return correspondences with confidence >= min_confidence."""


class SyntheticBackend(MatcherBackend):
    """Grid keypoints projected through a configured ground-truth transform.

    Exists so the end-to-end pipeline can run without any image content:
    the backend ignores pixel values and emits exact correspondences under
    its homography (frame coords -> window coords).
    """

    identity = "synthetic"
    deterministic = True

    def __init__(self, gt_h: Homography | None = None, grid_step: int = 24) -> None:
        if grid_step < 1:
            raise ValueError("grid_step must be >= 1")
        self.gt_h = gt_h if gt_h is not None else Homography.identity()
        self.grid_step = grid_step

    def match(self, frame: np.ndarray, window: np.ndarray, min_confidence: float) -> MatchSet:
        _check_match_args(frame, window, min_confidence)
        fh, fw = frame.shape
        wh, ww = window.shape
        margin = self.grid_step // 2
        pairs = []
        for v in range(margin, fh - margin, self.grid_step):
            for u in range(margin, fw - margin, self.grid_step):
                image_pt = PixelPoint(float(u), float(v))
                basemap_pt = apply(self.gt_h, image_pt)
                if 0 <= basemap_pt.u < ww and 0 <= basemap_pt.v < wh:
                    pairs.append(MatchPair(image_pt, basemap_pt, 1.0))
        return MatchSet(tuple(pairs))


class NccBackend(MatcherBackend):
    """Classical matcher: Harris-style corners + normalized cross-correlation.

    Patches around frame corners are correlated against a search region in
    the window centered on the center-alignment offset (the pipeline crops
    windows centered on the prior fix, so the frame sits mid-window up to
    the positional error being estimated). Deliberately weaker than a
    learned matcher, but dependency-free and deterministic.
    """

    identity = "ncc"
    deterministic = True

    def __init__(
        self,
        patch_radius: int = 10,
        search_radius: int = 64,
        max_keypoints: int = 200,
        harris_k: float = 0.04,
        corner_min_distance: int = 8,
    ) -> None:
        self.patch_radius = patch_radius
        self.search_radius = search_radius
        self.max_keypoints = max_keypoints
        self.harris_k = harris_k
        self.corner_min_distance = corner_min_distance

    def match(self, frame: np.ndarray, window: np.ndarray, min_confidence: float) -> MatchSet:
        _check_match_args(frame, window, min_confidence)
        frame_f = frame.astype(np.float64)
        window_f = window.astype(np.float64)
        corners = self._harris_corners(frame_f)
        if corners.size == 0:
            return MatchSet(())

        off_u = (window.shape[1] - frame.shape[1]) / 2.0
        off_v = (window.shape[0] - frame.shape[0]) / 2.0
        r = self.patch_radius
        pairs = []
        for v, u in corners:
            patch = frame_f[v - r : v + r + 1, u - r : u + r + 1]
            peak = self._ncc_peak(window_f, patch, u + off_u, v + off_v)
            if peak is None:
                continue
            pu, pv, score = peak
            confidence = (score + 1.0) / 2.0
            if confidence >= min_confidence:
                pairs.append(MatchPair(PixelPoint(float(u), float(v)), PixelPoint(pu, pv), confidence))
        return MatchSet(tuple(pairs))

    def _harris_corners(self, img: np.ndarray) -> np.ndarray:
        """Top corner locations as (row, col) pairs, margin-safe for patches."""
        ix = ndimage.sobel(img, axis=1, mode="reflect")
        iy = ndimage.sobel(img, axis=0, mode="reflect")
        sxx = ndimage.gaussian_filter(ix * ix, sigma=1.5)
        syy = ndimage.gaussian_filter(iy * iy, sigma=1.5)
        sxy = ndimage.gaussian_filter(ix * iy, sigma=1.5)
        response = sxx * syy - sxy * sxy - self.harris_k * (sxx + syy) ** 2

        margin = self.patch_radius + 1
        interior = np.zeros_like(response, dtype=np.bool_)
        interior[margin:-margin, margin:-margin] = True
        local_max = response == ndimage.maximum_filter(response, size=2 * self.corner_min_distance + 1)
        candidates = local_max & interior & (response > 0)
        coords = np.argwhere(candidates)
        if coords.size == 0:
            return coords
        order = np.argsort(response[coords[:, 0], coords[:, 1]])[::-1]
        return coords[order[: self.max_keypoints]]

    def _ncc_peak(
        self, window: np.ndarray, patch: np.ndarray, expect_u: float, expect_v: float
    ) -> tuple[float, float, float] | None:
        """Best NCC location for patch near (expect_u, expect_v) in window."""
        r = self.patch_radius
        s = self.search_radius
        u0 = int(round(expect_u))
        v0 = int(round(expect_v))
        top = max(0, v0 - s - r)
        left = max(0, u0 - s - r)
        bottom = min(window.shape[0], v0 + s + r + 1)
        right = min(window.shape[1], u0 + s + r + 1)
        region = window[top:bottom, left:right]
        if region.shape[0] < patch.shape[0] or region.shape[1] < patch.shape[1]:
            return None

        patch0 = patch - patch.mean()
        patch_norm = math.sqrt(float((patch0 * patch0).sum()))
        if patch_norm == 0.0:
            return None  # flat patch carries no signal
        numer = signal.fftconvolve(region, patch0[::-1, ::-1], mode="valid")

        # local region energy via summed-area tables
        n = patch.size
        ones = np.ones(patch.shape)
        local_sum = signal.fftconvolve(region, ones, mode="valid")
        local_sumsq = signal.fftconvolve(region * region, ones, mode="valid")
        var = np.maximum(local_sumsq - local_sum * local_sum / n, 0.0)
        denom = patch_norm * np.sqrt(var)
        with np.errstate(divide="ignore", invalid="ignore"):
            ncc = np.where(denom > 1e-9, numer / denom, -1.0)

        peak_idx = int(np.argmax(ncc))
        pv, pu = np.unravel_index(peak_idx, ncc.shape)
        score = float(ncc[pv, pu])
        # ncc grid position (0,0) corresponds to patch center at (top+r, left+r)
        return float(left + r + pu), float(top + r + pv), max(-1.0, min(1.0, score))


class ExternalProcessBackend(MatcherBackend):
    """Client for an out-of-process matcher speaking the stdio wire protocol.

    The worker is spawned lazily on first use and reused across calls.
    Requests are serialized (single-flight) because the protocol is
    strictly one-response-per-request, in order.
    """

    identity = "external"
    deterministic = False
    single_flight = True

    def __init__(self, command: Sequence[str], timeout_s: float = 120.0) -> None:
        if not command:
            raise ValueError("external backend needs a command to spawn")
        self.command = list(command)
        self.timeout_s = timeout_s
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self._next_id = 0

    def _ensure_process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    bufsize=1,
                )
            except OSError as exc:
                raise BackendUnavailable(f"cannot spawn {self.command[0]!r}: {exc}") from exc
        return self._proc

    def match(self, frame: np.ndarray, window: np.ndarray, min_confidence: float) -> MatchSet:
        _check_match_args(frame, window, min_confidence)
        with self._lock:
            proc = self._ensure_process()
            request_id = self._next_id
            self._next_id += 1
            request = {
                "id": request_id,
                "frame_png_b64": raster_to_png_b64(frame),
                "window_png_b64": raster_to_png_b64(window),
                "min_confidence": min_confidence,
            }
            try:
                assert proc.stdin is not None and proc.stdout is not None
                proc.stdin.write(json.dumps(request) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise BackendUnavailable(f"matcher process died: {exc}") from exc
            if not line:
                raise BackendUnavailable("matcher process closed its stdout")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MatchFailed(f"unparseable matcher response: {exc}") from exc
        if response.get("id") != request_id:
            raise MatchFailed(f"response id {response.get('id')} does not match request {request_id}")
        if "error" in response:
            raise MatchFailed(str(response["error"]))
        rows = response.get("matches")
        if not isinstance(rows, list):
            raise MatchFailed("response carries neither matches nor error")
        pairs = []
        try:
            for u_img, v_img, u_map, v_map, conf in rows:
                if conf >= min_confidence:
                    pairs.append(
                        MatchPair(PixelPoint(float(u_img), float(v_img)), PixelPoint(float(u_map), float(v_map)), float(conf))
                    )
        except (TypeError, ValueError) as exc:
            raise MatchFailed(f"malformed match row: {exc}") from exc
        return MatchSet(tuple(pairs))

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None

    def __enter__(self) -> "ExternalProcessBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def raster_to_png_b64(raster: np.ndarray) -> str:
    """Encode a 2-D raster as base64 PNG (clipped to 8-bit grayscale)."""
    data = np.clip(raster, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def png_b64_to_raster(payload: str) -> np.ndarray:
    """Decode a base64 PNG string back into a 2-D uint8 array."""
    img = Image.open(io.BytesIO(base64.b64decode(payload))).convert("L")
    return np.asarray(img, dtype=np.uint8)


def synthetic_matches(
    gt_h: Homography,
    mask: GisMask,
    n_ground: int,
    n_building: int,
    noise_px: float = 0.0,
    outlier_frac: float = 0.0,
    parallax_px: float = 0.0,
    *,
    seed: int,
    frame_size: tuple[int, int] | None = None,
) -> MatchSet:
    """Generate labeled ground-truth correspondences for benchmarking.

    Image points are sampled so that their gt_h projections land on mask
    pixels of the requested class; the basemap side is the projection plus
    isotropic Gaussian noise. Building points additionally receive one
    shared uniform-direction displacement of magnitude parallax_px per
    call, modelling the coherent offset that off-plane roof keypoints
    produce. A fraction of all pairs is then replaced by uniform random
    correspondences.

    Args:
        gt_h: ground-truth frame-to-basemap transform.
        mask: class raster in full-basemap coordinates.
        n_ground, n_building: pairs to sample per class (without replacement).
        noise_px: Gaussian sigma applied per axis to basemap points.
        outlier_frac: in [0, 1); fraction of pairs turned into gross outliers.
        parallax_px: displacement magnitude for building points.
        seed: RNG seed; identical inputs and seed reproduce bitwise.
        frame_size: optional (width, height); restricts image points to the
            frame raster.

    Raises:
        InsufficientClassPixels: a requested class has fewer usable pixels
            than asked for.
    """
    if not 0.0 <= outlier_frac < 1.0:
        raise ValueError(f"outlier_frac {outlier_frac} outside [0, 1)")
    if noise_px < 0.0:
        raise ValueError("noise_px must be >= 0")
    rng = np.random.default_rng(seed)
    inv = gt_h.inverse()

    def sample_class(building: bool, count: int) -> list[tuple[PixelPoint, PixelPoint]]:
        if count == 0:
            return []
        wanted = mask.bits if building else ~mask.bits
        vv, uu = np.nonzero(wanted)
        centers = np.stack([uu, vv], axis=1).astype(np.float64)
        if frame_size is not None:
            centers = _restrict_to_frame(centers, gt_h, inv, frame_size)
        name = "building" if building else "ground"
        if centers.shape[0] < count:
            raise InsufficientClassPixels(
                f"mask offers {centers.shape[0]} usable {name} pixels, need {count}"
            )
        chosen = centers[rng.choice(centers.shape[0], size=count, replace=False)]
        out = []
        for u, v in chosen:
            image_pt = apply(inv, PixelPoint(u, v))
            out.append((image_pt, apply(gt_h, image_pt)))
        return out

    ground = sample_class(False, n_ground)
    building = sample_class(True, n_building)

    image_pts = [g[0] for g in ground] + [b[0] for b in building]
    basemap = np.array([(g[1].u, g[1].v) for g in ground] + [(b[1].u, b[1].v) for b in building]).reshape(-1, 2)
    n_total = len(image_pts)

    if noise_px > 0.0 and n_total:
        basemap = basemap + rng.normal(0.0, noise_px, size=basemap.shape)
    if parallax_px > 0.0 and n_building:
        theta = rng.uniform(0.0, 2.0 * math.pi)
        basemap[n_ground:] += parallax_px * np.array([math.cos(theta), math.sin(theta)])
    n_outliers = int(round(outlier_frac * n_total))
    if n_outliers:
        hit = rng.choice(n_total, size=n_outliers, replace=False)
        basemap[hit, 0] = rng.uniform(0.0, mask.width, size=n_outliers)
        basemap[hit, 1] = rng.uniform(0.0, mask.height, size=n_outliers)

    pairs = tuple(
        MatchPair(image_pts[i], PixelPoint(float(basemap[i, 0]), float(basemap[i, 1])), 1.0)
        for i in range(n_total)
    )
    return MatchSet(pairs)


def _restrict_to_frame(
    centers: np.ndarray, gt_h: Homography, inv: Homography, frame_size: tuple[int, int]
) -> np.ndarray:
    """Keep basemap pixel centers whose image-side preimage is inside the frame."""
    w, h = frame_size
    # cheap bbox prefilter via the projected frame corners
    corners = [PixelPoint(0.0, 0.0), PixelPoint(float(w), 0.0), PixelPoint(float(w), float(h)), PixelPoint(0.0, float(h))]
    proj = np.array([(q.u, q.v) for q in (apply(gt_h, c) for c in corners)])
    lo = proj.min(axis=0) - 1.0
    hi = proj.max(axis=0) + 1.0
    keep = (centers >= lo).all(axis=1) & (centers <= hi).all(axis=1)
    centers = centers[keep]
    if centers.size == 0:
        return centers

    m = inv.matrix
    hom = np.hstack([centers, np.ones((centers.shape[0], 1))])
    proj = hom @ m.T
    wcoef = proj[:, 2]
    ok = np.abs(wcoef) > 1e-12
    xy = np.full((centers.shape[0], 2), np.nan)
    xy[ok] = proj[ok, :2] / wcoef[ok, None]
    inside = ok & (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
    return centers[inside]
