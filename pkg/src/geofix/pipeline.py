"""End-to-end orchestration, evaluation metrics, and file formats.

The per-frame search window walks with the platform: each frame matches
against a square basemap crop centered on the previous Ok fix, falling
back to the configured initial seed position for frame 0 and after any
NoFix. An --independent-windows mode pins each window to a per-frame prior
instead, decoupling frames (useful for simulator runs).

File formats owned here:
  trajectory CSV  frame_id,status,lat,lon,branch,n_valid,mean_reproj_px
  GT CSV          frame_id,lat,lon
  trajectory GeoJSON  LineString of Ok fixes + per-point properties
  report JSON     {"sequences": [{label, mae_m, max_m, fix_rate, ...}]}
"""

from __future__ import annotations

import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import (
    BackendUnavailable,
    ConfigInvalid,
    MatchFailed,
    MismatchedSequences,
    NoFootprints,
    NoOkFrames,
)
from .footprints import parse_footprints
from .geodesy import (
    GeoPoint,
    GeoTransform,
    PixelPoint,
    geodesic_distance_m,
    gps_to_pixel,
    load_world_file,
)
from .geopositioning import FixStatus, GeoFix, Trajectory, geolocate_frame
from .gisfilter import FilterConfig
from .homography import RansacConfig
from .mask import GisMask, rasterize
from .matching import ExternalProcessBackend, MatcherBackend, MatchSet, NccBackend, SyntheticBackend
from .simulator import MatchNoiseConfig, SimFlight

log = logging.getLogger(__name__)

GT_ACCURACY_NOTE = "GPS ground truth carries ±2.5 m sensor accuracy; read MAE against that floor."


@dataclass(frozen=True)
class FrameInput:
    """One pipeline input frame: a raster for the matcher path, or
    precomputed full-basemap matches for the simulator path. An optional
    prior drives --independent-windows."""

    frame_id: int
    raster: np.ndarray | None = None
    matches: MatchSet | None = None
    prior: GeoPoint | None = None


@dataclass
class PipelineConfig:
    """Validated run configuration (see load_config for the file schema)."""

    transform: GeoTransform
    initial_seed_position: GeoPoint
    filter_cfg: FilterConfig = FilterConfig()
    ransac_cfg: RansacConfig = RansacConfig()
    window_radius_px: int = 768
    use_gis_filter: bool = True
    independent_windows: bool = False
    basemap_raster: np.ndarray | None = None
    mask: GisMask | None = None
    backend: MatcherBackend | None = None
    min_confidence: float = 0.5
    frames_dir: Path | None = None
    frame_glob: str = "*.png"
    flight: SimFlight | None = None
    noise_cfg: MatchNoiseConfig = MatchNoiseConfig()
    output_paths: dict[str, Path] = field(default_factory=dict)


def load_grayscale(path: str | Path) -> np.ndarray:
    """Load an image as a 2-D uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def load_config(path: str | Path, *, need_raster: bool = False) -> PipelineConfig:
    """Parse and validate a TOML config file.

    Relative paths resolve against the config file's directory. Raises
    ConfigInvalid on any missing file, absent key, or out-of-range value.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"config is not valid TOML: {exc}") from exc
    base = path.parent

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    try:
        basemap_sec = doc["basemap"]
        world = resolve(basemap_sec["world_file"])
    except KeyError as exc:
        raise ConfigInvalid(f"config missing required key: {exc}") from exc
    if not world.exists():
        raise ConfigInvalid(f"world file not found: {world}")

    raster = None
    if "raster" in basemap_sec:
        raster_path = resolve(basemap_sec["raster"])
        if not raster_path.exists():
            raise ConfigInvalid(f"basemap raster not found: {raster_path}")
        raster = load_grayscale(raster_path)
        width, height = raster.shape[1], raster.shape[0]
    elif "width" in basemap_sec and "height" in basemap_sec:
        width, height = int(basemap_sec["width"]), int(basemap_sec["height"])
    else:
        raise ConfigInvalid("basemap needs either a raster path or explicit width/height")
    if need_raster and raster is None:
        raise ConfigInvalid("this command needs [basemap].raster")
    transform = load_world_file(world, width, height)

    mask = None
    if "footprints" in doc:
        fp_sec = doc["footprints"]
        try:
            fp_path = resolve(fp_sec["path"])
            fp_format = fp_sec["format"]
        except KeyError as exc:
            raise ConfigInvalid(f"[footprints] missing key: {exc}") from exc
        if fp_format not in ("geojson", "osm-xml"):
            raise ConfigInvalid(f"unknown footprint format {fp_format!r}")
        if not fp_path.exists():
            raise ConfigInvalid(f"footprints file not found: {fp_path}")
        try:
            result = parse_footprints(fp_path.read_bytes(), fp_format)
            footprints = result.footprints
            if result.skipped:
                log.warning("footprints: skipped %d malformed features", result.skipped)
        except NoFootprints:
            log.warning("footprints file holds no buildings; mask is all ground")
            footprints = []
        mask = rasterize(footprints, transform)
    else:
        mask = GisMask(np.zeros((height, width), dtype=np.bool_))

    pipe_sec = doc.get("pipeline", {})
    try:
        seed_pos = GeoPoint(float(pipe_sec["initial_seed_lat"]), float(pipe_sec["initial_seed_lon"]))
    except KeyError as exc:
        raise ConfigInvalid(f"[pipeline] missing key: {exc}") from exc
    except ValueError as exc:
        raise ConfigInvalid(f"initial seed position: {exc}") from exc

    filter_sec = doc.get("filter", {})
    ransac_sec = doc.get("ransac", {})
    try:
        filter_cfg = FilterConfig(
            threshold_t=int(filter_sec.get("threshold_t", 50)),
            ratio=float(filter_sec.get("ratio", 3.0)),
        )
        ransac_cfg = RansacConfig(
            max_iters=int(ransac_sec.get("max_iters", 2000)),
            inlier_threshold_px=float(ransac_sec.get("inlier_threshold_px", 3.0)),
            min_inliers=int(ransac_sec.get("min_inliers", 10)),
            seed=int(ransac_sec.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc

    matcher_sec = doc.get("matcher", {})
    backend = _build_backend(matcher_sec) if matcher_sec else None
    min_confidence = float(matcher_sec.get("min_confidence", 0.5))
    if not 0.0 <= min_confidence <= 1.0:
        raise ConfigInvalid(f"matcher.min_confidence {min_confidence} outside [0, 1]")

    frames_dir = resolve(pipe_sec["frames_dir"]) if "frames_dir" in pipe_sec else None

    flight = None
    noise_cfg = MatchNoiseConfig()
    if "simulate" in doc:
        sim = doc["simulate"]
        try:
            waypoints = tuple(GeoPoint(float(lat), float(lon)) for lat, lon in sim["waypoints"])
            flight = SimFlight(
                waypoints=waypoints,
                frame_size=(int(sim.get("frame_width", 512)), int(sim.get("frame_height", 512))),
                step_m=float(sim.get("step_m", 3.0)),
                scale_jitter=float(sim.get("scale_jitter", 0.0)),
                rot_jitter_deg=float(sim.get("rot_jitter_deg", 0.0)),
                seed=int(sim.get("seed", 0)),
            )
            noise_cfg = MatchNoiseConfig(
                n_ground=int(sim.get("n_ground", 100)),
                n_building=int(sim.get("n_building", 0)),
                noise_px=float(sim.get("noise_px", 0.0)),
                outlier_frac=float(sim.get("outlier_frac", 0.0)),
                parallax_px=float(sim.get("parallax_px", 0.0)),
                seed=int(sim.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"[simulate] section invalid: {exc}") from exc

    out_sec = doc.get("output", {})
    output_paths = {key: resolve(str(value)) for key, value in out_sec.items()}

    return PipelineConfig(
        transform=transform,
        initial_seed_position=seed_pos,
        filter_cfg=filter_cfg,
        ransac_cfg=ransac_cfg,
        window_radius_px=int(pipe_sec.get("window_radius_px", 768)),
        basemap_raster=raster,
        mask=mask,
        backend=backend,
        min_confidence=min_confidence,
        frames_dir=frames_dir,
        frame_glob=str(pipe_sec.get("frame_glob", "*.png")),
        flight=flight,
        noise_cfg=noise_cfg,
        output_paths=output_paths,
    )


def _build_backend(matcher_sec: Mapping) -> MatcherBackend:
    kind = matcher_sec.get("backend", "ncc")
    if kind == "ncc":
        return NccBackend(
            patch_radius=int(matcher_sec.get("patch_radius", 10)),
            search_radius=int(matcher_sec.get("search_radius", 64)),
            max_keypoints=int(matcher_sec.get("max_keypoints", 200)),
        )
    if kind == "synthetic":
        return SyntheticBackend(grid_step=int(matcher_sec.get("grid_step", 24)))
    if kind == "external":
        command = matcher_sec.get("command")
        if not isinstance(command, list) or not command:
            raise ConfigInvalid("[matcher] backend=external needs a command list")
        return ExternalProcessBackend([str(c) for c in command])
    raise ConfigInvalid(f"unknown matcher backend {kind!r}")


def run_pipeline(cfg: PipelineConfig, frames: Sequence[FrameInput]) -> Trajectory:
    """Localize every frame in order; per-frame failures become NoFix.

    Never aborts mid-sequence: matcher errors, estimation failures, and
    degenerate geometry are all absorbed into the frame's status.
    """
    if cfg.mask is None:
        raise ConfigInvalid("pipeline needs a mask (provide [footprints] or an all-ground default)")
    fixes: list[GeoFix] = []
    previous: GeoFix | None = None
    for frame in frames:
        center = _window_center(cfg, frame, previous)
        fix = _localize_one(cfg, frame, center)
        fixes.append(fix)
        previous = fix
    ok = sum(1 for f in fixes if f.status is FixStatus.OK)
    if ok == 0 and fixes:
        log.warning("pipeline produced zero Ok fixes over %d frames", len(fixes))
    return Trajectory(tuple(fixes))


def _window_center(cfg: PipelineConfig, frame: FrameInput, previous: GeoFix | None) -> GeoPoint:
    if cfg.independent_windows:
        return frame.prior if frame.prior is not None else cfg.initial_seed_position
    if previous is not None and previous.status is FixStatus.OK and previous.position is not None:
        return previous.position
    if previous is not None:  # previous frame lost the fix; start over from the seed
        log.info("frame %d: recovering, window re-centered on initial seed position", frame.frame_id)
    return cfg.initial_seed_position


def _localize_one(cfg: PipelineConfig, frame: FrameInput, center: GeoPoint) -> GeoFix:
    assert cfg.mask is not None
    if frame.matches is not None:
        matches = frame.matches
        frame_size = _frame_size_of(cfg, frame)
    elif frame.raster is not None:
        if cfg.backend is None:
            raise ConfigInvalid("raster frames need a [matcher] backend")
        frame_size = (frame.raster.shape[1], frame.raster.shape[0])
        if cfg.window_radius_px < max(frame_size) / 2:
            raise ConfigInvalid(
                f"window_radius_px {cfg.window_radius_px} < half the frame size {max(frame_size)}"
            )
        window, origin = _crop_window(cfg, center)
        try:
            matches = cfg.backend.match(frame.raster, window, cfg.min_confidence).with_origin(origin)
        except (BackendUnavailable, MatchFailed) as exc:
            log.warning("frame %d: matcher failed (%s)", frame.frame_id, exc)
            return GeoFix(frame_id=frame.frame_id, status=FixStatus.NO_FIX, reason=f"{type(exc).__name__}: {exc}")
    else:
        return GeoFix(frame_id=frame.frame_id, status=FixStatus.NO_FIX, reason="frame carries neither raster nor matches")

    ransac_cfg = replace(cfg.ransac_cfg, seed=_frame_seed(cfg.ransac_cfg.seed, frame.frame_id))
    return geolocate_frame(
        frame.frame_id,
        matches,
        cfg.mask,
        cfg.transform,
        frame_size,
        cfg.filter_cfg,
        ransac_cfg,
        use_gis_filter=cfg.use_gis_filter,
    )


def _frame_size_of(cfg: PipelineConfig, frame: FrameInput) -> tuple[int, int]:
    if frame.raster is not None:
        return (frame.raster.shape[1], frame.raster.shape[0])
    if cfg.flight is not None:
        return cfg.flight.frame_size
    return (512, 512)


def _frame_seed(base_seed: int, frame_id: int) -> int:
    return int(np.random.SeedSequence([base_seed, frame_id]).generate_state(1)[0])


def _crop_window(cfg: PipelineConfig, center: GeoPoint) -> tuple[np.ndarray, PixelPoint]:
    assert cfg.basemap_raster is not None
    raster = cfg.basemap_raster
    side = 2 * cfg.window_radius_px
    c = gps_to_pixel(center, cfg.transform)
    u0 = int(round(c.u)) - cfg.window_radius_px
    v0 = int(round(c.v)) - cfg.window_radius_px
    u0 = max(0, min(u0, raster.shape[1] - min(side, raster.shape[1])))
    v0 = max(0, min(v0, raster.shape[0] - min(side, raster.shape[0])))
    window = raster[v0 : v0 + side, u0 : u0 + side]
    return window, PixelPoint(float(u0), float(v0))


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvaluationReport:
    """Per-sequence position-error metrics over the Ok frames."""

    label: str
    mae_m: float
    max_m: float
    fix_rate: float
    n_frames: int
    n_ok: int
    per_frame: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if self.n_ok > 0 and self.mae_m > self.max_m + 1e-12:
            raise ValueError("MAE cannot exceed Max")


def evaluate(
    pred: Trajectory, gt: Mapping[int, GeoPoint] | Sequence[tuple[int, GeoPoint]], label: str = "seq"
) -> EvaluationReport:
    """Geodesic error metrics of a trajectory against ground truth.

    NoFix frames are excluded from MAE/Max but counted in fix_rate.

    Raises:
        NoOkFrames: the trajectory has no Ok fixes to evaluate.
        ValueError: an Ok fix lacks a ground-truth entry.
    """
    gt_map = dict(gt) if not isinstance(gt, Mapping) else dict(gt)
    errors: list[tuple[int, float]] = []
    for fix in pred.fixes:
        if fix.status is not FixStatus.OK:
            continue
        if fix.frame_id not in gt_map:
            raise ValueError(f"Ok fix for frame {fix.frame_id} has no ground-truth entry")
        assert fix.position is not None
        errors.append((fix.frame_id, geodesic_distance_m(fix.position, gt_map[fix.frame_id])))
    if not errors:
        raise NoOkFrames(f"trajectory {label!r} has zero Ok fixes")
    values = [e for _, e in errors]
    return EvaluationReport(
        label=label,
        mae_m=float(np.mean(values)),
        max_m=float(np.max(values)),
        fix_rate=len(errors) / len(pred.fixes) if len(pred.fixes) else 0.0,
        n_frames=len(pred.fixes),
        n_ok=len(errors),
        per_frame=tuple(errors),
    )


def improvement_pct(mae_without: float, mae_with: float) -> float:
    """Relative MAE reduction in percent: (a - b) / a * 100."""
    return (mae_without - mae_with) / mae_without * 100.0


@dataclass(frozen=True)
class SequenceComparison:
    label: str
    mae_without: float
    max_without: float
    mae_with: float
    max_with: float
    improvement: float


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[SequenceComparison, ...]

    @property
    def mean_improvement_pct(self) -> float:
        return float(np.mean([r.improvement for r in self.rows]))

    def format(self) -> str:
        lines = ["Seq. | MAE/Max(m) w/o filter | MAE/Max(m) w/ filter | MAE Imp."]
        for row in self.rows:
            lines.append(
                f"{row.label} | {row.mae_without:.2f} / {row.max_without:.2f}"
                f" | {row.mae_with:.2f} / {row.max_with:.2f} | {row.improvement:.2f}%"
            )
        lines.append(f"mean MAE improvement: {self.mean_improvement_pct:.2f}%")
        lines.append(GT_ACCURACY_NOTE)
        return "\n".join(lines)


def compare_runs(
    without: EvaluationReport | Sequence[EvaluationReport],
    with_: EvaluationReport | Sequence[EvaluationReport],
) -> ComparisonTable:
    """Pair up per-sequence reports and compute MAE improvements.

    Raises:
        MismatchedSequences: different sequence counts or frame counts.
    """
    a_list = [without] if isinstance(without, EvaluationReport) else list(without)
    b_list = [with_] if isinstance(with_, EvaluationReport) else list(with_)
    if len(a_list) != len(b_list):
        raise MismatchedSequences(f"{len(a_list)} sequences vs {len(b_list)}")
    rows = []
    for a, b in zip(a_list, b_list):
        if a.n_frames != b.n_frames:
            raise MismatchedSequences(
                f"sequence {a.label!r}: {a.n_frames} frames vs {b.n_frames} in {b.label!r}"
            )
        rows.append(
            SequenceComparison(
                label=a.label,
                mae_without=a.mae_m,
                max_without=a.max_m,
                mae_with=b.mae_m,
                max_with=b.max_m,
                improvement=improvement_pct(a.mae_m, b.mae_m),
            )
        )
    return ComparisonTable(tuple(rows))


# ---------------------------------------------------------------------------
# file formats

_CSV_HEADER = ["frame_id", "status", "lat", "lon", "branch", "n_valid", "mean_reproj_px"]


def trajectory_csv_bytes(traj: Trajectory) -> bytes:
    """Serialize a trajectory deterministically (byte-identical reruns)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_HEADER)
    for fix in traj.fixes:
        ok = fix.status is FixStatus.OK
        writer.writerow(
            [
                fix.frame_id,
                fix.status.value,
                repr(fix.position.lat) if ok and fix.position else "",
                repr(fix.position.lon) if ok and fix.position else "",
                fix.branch.value if fix.branch is not None else "",
                fix.n_valid_matches,
                repr(fix.mean_reprojection_px) if fix.mean_reprojection_px is not None else "",
            ]
        )
    return buf.getvalue().encode("utf-8")


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    Path(path).write_bytes(trajectory_csv_bytes(traj))


def read_trajectory_csv(path: str | Path) -> Trajectory:
    fixes = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ok = row["status"] == FixStatus.OK.value
            fixes.append(
                GeoFix(
                    frame_id=int(row["frame_id"]),
                    status=FixStatus.OK if ok else FixStatus.NO_FIX,
                    position=GeoPoint(float(row["lat"]), float(row["lon"])) if ok else None,
                    n_valid_matches=int(row["n_valid"] or 0),
                    mean_reprojection_px=float(row["mean_reproj_px"]) if row["mean_reproj_px"] else None,
                )
            )
    return Trajectory(tuple(fixes))


def write_gt_csv(entries: Sequence[tuple[int, GeoPoint]], path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_id", "lat", "lon"])
    for frame_id, point in entries:
        writer.writerow([frame_id, repr(point.lat), repr(point.lon)])
    Path(path).write_text(buf.getvalue())


def read_gt_csv(path: str | Path) -> dict[int, GeoPoint]:
    out: dict[int, GeoPoint] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[int(row["frame_id"])] = GeoPoint(float(row["lat"]), float(row["lon"]))
    return out


def write_trajectory_geojson(traj: Trajectory, path: str | Path) -> None:
    """LineString of Ok fixes plus one Point feature per fix with properties."""
    ok = [f for f in traj.fixes if f.status is FixStatus.OK and f.position is not None]
    features: list[dict] = [
        {
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[f.position.lon, f.position.lat] for f in ok],
            },
            "properties": {"kind": "trajectory", "n_frames": len(traj.fixes), "n_ok": len(ok)},
        }
    ]
    for f in ok:
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [f.position.lon, f.position.lat]},
                "properties": {
                    "frame_id": f.frame_id,
                    "branch": f.branch.value if f.branch else None,
                    "n_valid": f.n_valid_matches,
                    "mean_reproj_px": f.mean_reprojection_px,
                },
            }
        )
    Path(path).write_text(json.dumps({"type": "FeatureCollection", "features": features}, indent=2))


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "label": report.label,
        "mae_m": report.mae_m,
        "max_m": report.max_m,
        "fix_rate": report.fix_rate,
        "n_frames": report.n_frames,
        "n_ok": report.n_ok,
        "per_frame": [[fid, err] for fid, err in report.per_frame],
        "gt_accuracy_note": GT_ACCURACY_NOTE,
    }


def write_report_json(reports: EvaluationReport | Sequence[EvaluationReport], path: str | Path) -> None:
    items = [reports] if isinstance(reports, EvaluationReport) else list(reports)
    payload = {"sequences": [report_to_dict(r) for r in items]}
    Path(path).write_text(json.dumps(payload, indent=2))


def read_report_json(path: str | Path) -> list[EvaluationReport]:
    doc = json.loads(Path(path).read_text())
    reports = []
    for seq in doc.get("sequences", []):
        reports.append(
            EvaluationReport(
                label=seq["label"],
                mae_m=float(seq["mae_m"]),
                max_m=float(seq["max_m"]),
                fix_rate=float(seq.get("fix_rate", 1.0)),
                n_frames=int(seq.get("n_frames", 0)),
                n_ok=int(seq.get("n_ok", 0)),
                per_frame=tuple((int(f), float(e)) for f, e in seq.get("per_frame", [])),
            )
        )
    return reports
