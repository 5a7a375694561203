"""Planar homography estimation: normalized DLT inside a 4-point RANSAC loop.

The transform maps frame pixels to basemap-window pixels. Matrices are
stored scale-normalized (Frobenius norm 1, sign fixed so the bottom-right
entry is non-negative when nonzero), which makes recovered and ground-truth
matrices directly comparable entry-by-entry.

Hartley normalization (centroid to the origin, mean distance sqrt(2)) is
applied to both point sets before every linear solve; without it the DLT
system is numerically unusable at basemap pixel scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import (
    DegenerateConfiguration,
    InsufficientMatches,
    NoConsensus,
    PointAtInfinity,
)
from .geodesy import PixelPoint

if TYPE_CHECKING:  # avoid a runtime cycle with matching
    from .matching import MatchPair

_W_EPS = 1e-12  # homogeneous scale below which a point is at infinity
_COLLINEAR_AREA_EPS = 1e-6  # px^2, minimal-sample degeneracy test
_RANK_EPS = 1e-10  # relative singular-value floor for solution uniqueness


@dataclass(frozen=True)
class Homography:
    """3x3 invertible projective transform, scale-normalized."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        self.matrix.setflags(write=False)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Homography":
        """Normalize an arbitrary 3x3 matrix; reject singular ones."""
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError("homography must be a finite 3x3 matrix")
        norm = float(np.linalg.norm(m))
        if norm == 0.0:
            raise DegenerateConfiguration("zero matrix")
        m = m / norm
        sv = np.linalg.svd(m, compute_uv=False)
        if sv[-1] <= _RANK_EPS * sv[0]:
            raise DegenerateConfiguration("matrix is rank-deficient")
        if m[2, 2] != 0.0:
            m = m * math.copysign(1.0, m[2, 2])
        elif m.flat[np.argmax(np.abs(m))] < 0.0:
            m = -m
        return cls(m.copy())

    @classmethod
    def identity(cls) -> "Homography":
        return cls.from_matrix(np.eye(3))

    @classmethod
    def translation(cls, du: float, dv: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = du
        m[1, 2] = dv
        return cls.from_matrix(m)

    def inverse(self) -> "Homography":
        return Homography.from_matrix(np.linalg.inv(self.matrix))


@dataclass(frozen=True)
class RansacConfig:
    """Sampling budget and inlier rule for robust estimation.

    Iteration count is fixed (no adaptive early exit) so runs are
    deterministic; 2000 iterations cover 30% outliers at 4-point samples
    with a miss probability below 1e-6.
    """

    max_iters: int = 2000
    inlier_threshold_px: float = 3.0
    min_inliers: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.inlier_threshold_px > 0:
            raise ValueError("inlier_threshold_px must be > 0")
        if self.min_inliers < 4:
            raise ValueError("min_inliers must be >= 4")


@dataclass(frozen=True)
class HomographyEstimate:
    """RANSAC result: model, surviving inlier indices, mean forward error."""

    h: Homography
    inlier_indices: tuple[int, ...]
    mean_reprojection_px: float


def apply(h: Homography, p: PixelPoint) -> PixelPoint:
    """Apply the projective transform to one point."""
    m = h.matrix
    w = m[2, 0] * p.u + m[2, 1] * p.v + m[2, 2]
    if abs(w) <= _W_EPS:
        raise PointAtInfinity(f"({p.u}, {p.v}) maps to infinity (w={w})")
    return PixelPoint(
        (m[0, 0] * p.u + m[0, 1] * p.v + m[0, 2]) / w,
        (m[1, 0] * p.u + m[1, 1] * p.v + m[1, 2]) / w,
    )


def pairs_to_arrays(pairs: Sequence["MatchPair"]) -> tuple[np.ndarray, np.ndarray]:
    """Split correspondences into (N,2) image and basemap coordinate arrays."""
    img = np.array([(p.image_pt.u, p.image_pt.v) for p in pairs], dtype=np.float64)
    bmp = np.array([(p.basemap_pt.u, p.basemap_pt.v) for p in pairs], dtype=np.float64)
    return img.reshape(-1, 2), bmp.reshape(-1, 2)


def reprojection_errors(h: Homography, pairs: Sequence["MatchPair"]) -> np.ndarray:
    """Forward transfer error |h(image_pt) - basemap_pt| per pair, in pixels.

    Pairs whose image point maps to infinity get an infinite error.
    """
    img, bmp = pairs_to_arrays(pairs)
    return _errors_for_matrix(h.matrix, img, bmp)


def _errors_for_matrix(m: np.ndarray, img: np.ndarray, bmp: np.ndarray) -> np.ndarray:
    ones = np.ones((img.shape[0], 1))
    hom = np.hstack([img, ones])
    proj = hom @ m.T
    w = proj[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = proj[:, :2] / w[:, None]
        err = np.hypot(xy[:, 0] - bmp[:, 0], xy[:, 1] - bmp[:, 1])
    err[np.abs(w) <= _W_EPS] = np.inf
    return err


def _any_three_collinear(pts: np.ndarray) -> bool:
    """True if any triple from a 4-point set spans area <= the tolerance."""
    idx = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
    for i, j, k in idx:
        d1 = pts[j] - pts[i]
        d2 = pts[k] - pts[i]
        if abs(d1[0] * d2[1] - d1[1] * d2[0]) / 2.0 <= _COLLINEAR_AREA_EPS:
            return True
    return False


def _hartley_transform(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return normalized points and the 3x3 similarity that produced them."""
    c = pts.mean(axis=0)
    d = float(np.hypot(*(pts - c).T).mean())
    if d <= 0.0:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / d
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return (pts - c) * s, T


def _dlt_arrays(img: np.ndarray, bmp: np.ndarray) -> np.ndarray:
    """Core normalized DLT on coordinate arrays; returns a raw 3x3 matrix."""
    n = img.shape[0]
    img_n, t_img = _hartley_transform(img)
    bmp_n, t_bmp = _hartley_transform(bmp)

    a = np.zeros((2 * n, 9))
    x, y = img_n[:, 0], img_n[:, 1]
    u, v = bmp_n[:, 0], bmp_n[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v

    _, s, vt = np.linalg.svd(a)
    # The solution must be unique: exactly one (near-)zero direction.
    limit = s[-1] if 2 * n == 8 else s[-2]
    if limit <= _RANK_EPS * s[0]:
        raise DegenerateConfiguration("correspondences leave the homography underdetermined")
    h_n = vt[-1].reshape(3, 3)
    return np.linalg.inv(t_bmp) @ h_n @ t_img


def dlt(pairs: Sequence["MatchPair"]) -> Homography:
    """Least-squares homography from >= 4 correspondences.

    Raises:
        InsufficientMatches: fewer than 4 pairs.
        DegenerateConfiguration: collinear/coincident points or a singular
            stacked system.
    """
    if len(pairs) < 4:
        raise InsufficientMatches(f"DLT needs >= 4 pairs, got {len(pairs)}")
    img, bmp = pairs_to_arrays(pairs)
    if len(pairs) == 4 and (_any_three_collinear(img) or _any_three_collinear(bmp)):
        raise DegenerateConfiguration("three of the four sample points are collinear")
    return Homography.from_matrix(_dlt_arrays(img, bmp))


def ransac_estimate(pairs: Sequence["MatchPair"], cfg: RansacConfig) -> HomographyEstimate:
    """Robust homography fit: 4-point hypotheses, inlier consensus, DLT refit.

    The hypothesis stage is fully vectorized: all minimal samples are drawn
    up front from the seeded generator and solved as one batched SVD, so
    results are independent of execution order and reproducible bit-for-bit.

    Raises:
        InsufficientMatches: fewer than 4 pairs.
        NoConsensus: best model supports fewer than cfg.min_inliers pairs.
    """
    n = len(pairs)
    if n < 4:
        raise InsufficientMatches(f"RANSAC needs >= 4 pairs, got {n}")
    img, bmp = pairs_to_arrays(pairs)
    rng = np.random.default_rng(cfg.seed)
    samples = np.argsort(rng.random((cfg.max_iters, n)), axis=1)[:, :4]

    models, valid = _solve_minimal_batch(img[samples], bmp[samples])
    errs = _batched_errors(models, img, bmp)
    inlier_mask = errs <= cfg.inlier_threshold_px
    counts = np.where(valid, inlier_mask.sum(axis=1), -1)

    best_count = int(counts.max())
    if best_count < cfg.min_inliers:
        raise NoConsensus(f"best consensus {max(best_count, 0)} < min_inliers {cfg.min_inliers}")
    candidates = np.flatnonzero(counts == best_count)
    with np.errstate(invalid="ignore"):
        mean_errs = np.where(inlier_mask[candidates], errs[candidates], 0.0).sum(axis=1) / best_count
    best = candidates[int(np.argmin(mean_errs))]

    hypothesis = Homography.from_matrix(models[best])
    hyp_inliers = np.flatnonzero(inlier_mask[best])
    final_h, final_inliers = hypothesis, hyp_inliers
    if len(hyp_inliers) > 4:
        try:
            refit = Homography.from_matrix(_dlt_arrays(img[hyp_inliers], bmp[hyp_inliers]))
        except DegenerateConfiguration:
            refit = None
        if refit is not None:
            refit_errs = _errors_for_matrix(refit.matrix, img, bmp)
            refit_inliers = np.flatnonzero(refit_errs <= cfg.inlier_threshold_px)
            if len(refit_inliers) >= cfg.min_inliers:
                final_h, final_inliers = refit, refit_inliers

    final_errs = _errors_for_matrix(final_h.matrix, img, bmp)[final_inliers]
    return HomographyEstimate(
        h=final_h,
        inlier_indices=tuple(int(i) for i in final_inliers),
        mean_reprojection_px=float(final_errs.mean()),
    )


def _solve_minimal_batch(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve DLT for a batch of 4-point samples.

    Args:
        p, q: (B, 4, 2) image and basemap sample coordinates.

    Returns:
        (B, 3, 3) candidate matrices and a (B,) validity mask; invalid
        entries (degenerate samples) hold identity placeholders.
    """
    b = p.shape[0]
    valid = ~(_collinear_batch(p) | _collinear_batch(q))

    def normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        c = pts.mean(axis=1, keepdims=True)
        d = np.linalg.norm(pts - c, axis=2).mean(axis=1)
        # coincident samples (d == 0) are already invalid via the collinearity mask
        s = math.sqrt(2.0) / np.where(d > 0.0, d, 1.0)
        return (pts - c) * s[:, None, None], c[:, 0, :], s

    pn, pc, ps = normalize(p)
    qn, qc, qs = normalize(q)

    a = np.zeros((b, 8, 9))
    x, y = pn[:, :, 0], pn[:, :, 1]
    u, v = qn[:, :, 0], qn[:, :, 1]
    a[:, 0::2, 0] = x
    a[:, 0::2, 1] = y
    a[:, 0::2, 2] = 1.0
    a[:, 0::2, 6] = -u * x
    a[:, 0::2, 7] = -u * y
    a[:, 0::2, 8] = -u
    a[:, 1::2, 3] = x
    a[:, 1::2, 4] = y
    a[:, 1::2, 5] = 1.0
    a[:, 1::2, 6] = -v * x
    a[:, 1::2, 7] = -v * y
    a[:, 1::2, 8] = -v

    _, s, vt = np.linalg.svd(a)
    valid &= s[:, -1] > _RANK_EPS * s[:, 0]
    h_n = vt[:, -1, :].reshape(b, 3, 3)

    # Denormalize: inv(T_q) @ Hn @ T_p, with both similarities built analytically.
    t_p = np.zeros((b, 3, 3))
    t_p[:, 0, 0] = ps
    t_p[:, 1, 1] = ps
    t_p[:, 0, 2] = -ps * pc[:, 0]
    t_p[:, 1, 2] = -ps * pc[:, 1]
    t_p[:, 2, 2] = 1.0
    t_q_inv = np.zeros((b, 3, 3))
    t_q_inv[:, 0, 0] = 1.0 / qs
    t_q_inv[:, 1, 1] = 1.0 / qs
    t_q_inv[:, 0, 2] = qc[:, 0]
    t_q_inv[:, 1, 2] = qc[:, 1]
    t_q_inv[:, 2, 2] = 1.0

    models = t_q_inv @ h_n @ t_p
    models[~valid] = np.eye(3)
    return models, valid


def _collinear_batch(pts: np.ndarray) -> np.ndarray:
    """(B,) mask: some triple of the 4 sample points is (near-)collinear."""
    idx = np.array([(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)])
    a = pts[:, idx[:, 0], :]
    d1 = pts[:, idx[:, 1], :] - a
    d2 = pts[:, idx[:, 2], :] - a
    areas = np.abs(d1[:, :, 0] * d2[:, :, 1] - d1[:, :, 1] * d2[:, :, 0]) / 2.0
    return (areas <= _COLLINEAR_AREA_EPS).any(axis=1)


def _batched_errors(models: np.ndarray, img: np.ndarray, bmp: np.ndarray) -> np.ndarray:
    """Forward transfer errors for every (model, pair) combination."""
    hom = np.hstack([img, np.ones((img.shape[0], 1))])
    proj = np.einsum("bij,nj->bni", models, hom)
    w = proj[:, :, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = proj[:, :, :2] / w[:, :, None]
        errs = np.hypot(xy[:, :, 0] - bmp[None, :, 0], xy[:, :, 1] - bmp[None, :, 1])
    errs[np.abs(w) <= _W_EPS] = np.inf
    np.nan_to_num(errs, copy=False, nan=np.inf)
    return errs
