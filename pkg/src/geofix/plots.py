"""Figure rendering for evaluation output (file-only, no GUI backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .geodesy import GeoPoint
from .geopositioning import FixStatus, Trajectory

GT_BAND_M = 2.5  # consumer-GPS ground-truth accuracy band shown on error plots


def save_trajectory_figure(
    traj: Trajectory, gt: Mapping[int, GeoPoint], path: str | Path
) -> None:
    """Predicted track vs ground truth in lon/lat axes."""
    ok = [f for f in traj.fixes if f.status is FixStatus.OK and f.position is not None]
    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    if gt:
        gt_pts = [gt[k] for k in sorted(gt)]
        ax.plot([p.lon for p in gt_pts], [p.lat for p in gt_pts], "r-", lw=1.5, label="ground truth")
    if ok:
        ax.plot(
            [f.position.lon for f in ok],
            [f.position.lat for f in ok],
            "o-",
            color="#c9a227",
            lw=1.2,
            ms=3,
            label="predicted",
        )
    ax.set_xlabel("longitude [deg]")
    ax.set_ylabel("latitude [deg]")
    ax.set_title("trajectory")
    ax.legend(loc="best", fontsize=8)
    ax.ticklabel_format(useOffset=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_error_figure(per_frame: Sequence[tuple[int, float]], path: str | Path) -> None:
    """Per-frame geodesic error with the GT accuracy band for context."""
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    if per_frame:
        ids = [f for f, _ in per_frame]
        errs = [e for _, e in per_frame]
        ax.plot(ids, errs, "o-", ms=3, lw=1.0, color="#2b6cb0")
    ax.axhspan(0.0, GT_BAND_M, color="0.85", zorder=0, label=f"GT accuracy ±{GT_BAND_M} m")
    ax.set_xlabel("frame")
    ax.set_ylabel("position error [m]")
    ax.set_title("per-frame geodesic error")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
