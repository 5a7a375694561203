"""geofix command-line tool.

Subcommands:
    run        localize a directory of frames against a basemap
    simulate   run the synthetic-flight pipeline from a config
    eval       score a predicted trajectory CSV against a GT CSV
    compare    improvement table between two report JSONs
    plot-data  long-form CSV plus rendered figures for a prediction/GT pair

Exit codes: 0 success (NoFix frames included), 2 configuration error,
3 evaluation impossible (zero Ok fixes).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigInvalid, MismatchedSequences, NoOkFrames
from .geodesy import geodesic_distance_m
from .geopositioning import FixStatus, Trajectory
from .pipeline import (
    FrameInput,
    GT_ACCURACY_NOTE,
    PipelineConfig,
    compare_runs,
    evaluate,
    load_config,
    load_grayscale,
    read_gt_csv,
    read_report_json,
    read_trajectory_csv,
    run_pipeline,
    write_gt_csv,
    write_report_json,
    write_trajectory_csv,
    write_trajectory_geojson,
)
from .simulator import emit_matches, generate_flight

log = logging.getLogger(__name__)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        log.error("configuration error: %s", exc)
        return 2
    except NoOkFrames as exc:
        log.error("%s", exc)
        return 3
    except MismatchedSequences as exc:
        log.error("%s", exc)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geofix", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(required=True)

    p_run = sub.add_parser("run", help="localize frames from a directory")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--no-gis-filter", action="store_true", help="keep building matches")
    p_run.add_argument("--independent-windows", action="store_true", help="window per provided prior")
    p_run.set_defaults(func=_cmd_run)

    p_sim = sub.add_parser("simulate", help="simulated flight end to end")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--no-gis-filter", action="store_true", help="keep building matches")
    p_sim.set_defaults(func=_cmd_simulate)

    p_eval = sub.add_parser("eval", help="trajectory error metrics")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--label", default="seq")
    p_eval.add_argument("--out", help="write the report JSON here")
    p_eval.set_defaults(func=_cmd_eval)

    p_cmp = sub.add_parser("compare", help="improvement between two runs")
    p_cmp.add_argument("--a", required=True, help="report JSON without the filter")
    p_cmp.add_argument("--b", required=True, help="report JSON with the filter")
    p_cmp.add_argument("--out", help="write the comparison JSON here")
    p_cmp.set_defaults(func=_cmd_compare)

    p_plot = sub.add_parser("plot-data", help="plottable long-form CSV + figures")
    p_plot.add_argument("--pred", required=True)
    p_plot.add_argument("--gt", required=True)
    p_plot.add_argument("--out-dir", default=".")
    p_plot.set_defaults(func=_cmd_plot_data)
    return parser


def _write_outputs(cfg: PipelineConfig, traj: Trajectory) -> None:
    paths = cfg.output_paths
    if "trajectory_csv" in paths:
        paths["trajectory_csv"].parent.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(traj, paths["trajectory_csv"])
        log.info("wrote %s", paths["trajectory_csv"])
    if "trajectory_geojson" in paths:
        paths["trajectory_geojson"].parent.mkdir(parents=True, exist_ok=True)
        write_trajectory_geojson(traj, paths["trajectory_geojson"])
        log.info("wrote %s", paths["trajectory_geojson"])
    if "mask_pgm" in paths and cfg.mask is not None:
        from .mask import save_pgm

        paths["mask_pgm"].parent.mkdir(parents=True, exist_ok=True)
        save_pgm(cfg.mask, paths["mask_pgm"])
    if "mask_rle" in paths and cfg.mask is not None:
        from .mask import save_rle

        paths["mask_rle"].parent.mkdir(parents=True, exist_ok=True)
        save_rle(cfg.mask, paths["mask_rle"])


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, need_raster=True)
    if cfg.frames_dir is None:
        raise ConfigInvalid("run needs [pipeline].frames_dir")
    if not cfg.frames_dir.is_dir():
        raise ConfigInvalid(f"frames_dir {cfg.frames_dir} is not a directory")
    if cfg.backend is None:
        raise ConfigInvalid("run needs a [matcher] section")
    cfg.use_gis_filter = not args.no_gis_filter
    cfg.independent_windows = args.independent_windows
    frame_paths = sorted(cfg.frames_dir.glob(cfg.frame_glob))
    if not frame_paths:
        raise ConfigInvalid(f"no frames match {cfg.frame_glob!r} under {cfg.frames_dir}")
    frames = [FrameInput(frame_id=i, raster=load_grayscale(p)) for i, p in enumerate(frame_paths)]
    traj = run_pipeline(cfg, frames)
    _write_outputs(cfg, traj)
    n_ok = len(traj.ok_fixes)
    log.info("localized %d/%d frames", n_ok, len(traj))
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if cfg.flight is None:
        raise ConfigInvalid("simulate needs a [simulate] section")
    cfg.use_gis_filter = not args.no_gis_filter
    assert cfg.mask is not None
    sim_frames = generate_flight(cfg.flight, cfg.transform, cfg.basemap_raster)
    frames = [
        FrameInput(frame_id=f.frame_id, matches=emit_matches(f, cfg.mask, cfg.noise_cfg), prior=f.gt_position)
        for f in sim_frames
    ]
    traj = run_pipeline(cfg, frames)
    _write_outputs(cfg, traj)
    if "gt_csv" in cfg.output_paths:
        cfg.output_paths["gt_csv"].parent.mkdir(parents=True, exist_ok=True)
        write_gt_csv([(f.frame_id, f.gt_position) for f in sim_frames], cfg.output_paths["gt_csv"])
        log.info("wrote %s", cfg.output_paths["gt_csv"])
    n_ok = len(traj.ok_fixes)
    log.info("simulated %d frames, %d Ok fixes", len(traj), n_ok)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    pred = read_trajectory_csv(args.pred)
    gt = read_gt_csv(args.gt)
    report = evaluate(pred, gt, label=args.label)
    print(f"sequence {report.label}: MAE {report.mae_m:.2f} m, Max {report.max_m:.2f} m")
    print(f"fix rate {report.fix_rate:.3f} ({report.n_ok}/{report.n_frames} frames)")
    print(GT_ACCURACY_NOTE)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_report_json(report, args.out)
        log.info("wrote %s", args.out)
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    table = compare_runs(read_report_json(args.a), read_report_json(args.b))
    print(table.format())
    if args.out:
        payload = {
            "rows": [
                {
                    "label": r.label,
                    "mae_without": r.mae_without,
                    "max_without": r.max_without,
                    "mae_with": r.mae_with,
                    "max_with": r.max_with,
                    "improvement_pct": r.improvement,
                }
                for r in table.rows
            ],
            "mean_improvement_pct": table.mean_improvement_pct,
        }
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2))
        log.info("wrote %s", args.out)
    return 0


def _cmd_plot_data(args: argparse.Namespace) -> int:
    from .plots import save_error_figure, save_trajectory_figure

    pred = read_trajectory_csv(args.pred)
    gt = read_gt_csv(args.gt)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows: list[list] = []
    per_frame: list[tuple[int, float]] = []
    for fix in pred.fixes:
        if fix.status is FixStatus.OK and fix.position is not None:
            err = geodesic_distance_m(fix.position, gt[fix.frame_id]) if fix.frame_id in gt else ""
            if err != "":
                per_frame.append((fix.frame_id, err))
            rows.append([fix.frame_id, "pred", repr(fix.position.lat), repr(fix.position.lon), repr(err) if err != "" else ""])
        else:
            rows.append([fix.frame_id, "pred", "", "", ""])
    for frame_id in sorted(gt):
        rows.append([frame_id, "gt", repr(gt[frame_id].lat), repr(gt[frame_id].lon), ""])

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_id", "series", "lat", "lon", "error_m"])
    writer.writerows(rows)
    (out_dir / "plot_data.csv").write_text(buf.getvalue())

    save_trajectory_figure(pred, gt, out_dir / "trajectory.png")
    save_error_figure(per_frame, out_dir / "error_per_frame.png")
    log.info("wrote plot data and figures under %s", out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
