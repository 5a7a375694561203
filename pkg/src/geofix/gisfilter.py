"""Selection of coplanarity-safe matches using the building mask.

Matched keypoints on roofs sit above the ground plane and corrupt a
ground-plane homography, so matches are first labeled ground/building by
mask lookup and then one class (or the union) is selected by a fixed
decision rule driven by two constants: a count threshold (default 50) and
a building-to-ground ratio bound (default 3, strict comparison).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .mask import GisMask, PixelClass, classify
from .geodesy import PixelPoint
from .matching import MatchPair, MatchSet


class FilterBranch(Enum):
    """Which arm of the selection rule fired (logged per frame)."""

    GROUND_DOMINANT = "GroundDominant"  # enough ground, buildings not overwhelming
    BUILDING_DOMINANT = "BuildingDominant"  # enough ground, but buildings >= ratio * ground
    BUILDING_ONLY = "BuildingOnly"  # too little ground, enough building
    UNION = "Union"  # both classes scarce; keep everything


@dataclass(frozen=True)
class FilterConfig:
    threshold_t: int = 50
    ratio: float = 3.0

    def __post_init__(self) -> None:
        if self.threshold_t < 1:
            raise ValueError("threshold_t must be >= 1")
        if not self.ratio > 0:
            raise ValueError("ratio must be > 0")


@dataclass(frozen=True)
class LabeledMatchSet:
    """Disjoint ground/building partition of a MatchSet, order-preserving."""

    ground: tuple[MatchPair, ...]
    building: tuple[MatchPair, ...]

    @property
    def n_ground(self) -> int:
        return len(self.ground)

    @property
    def n_building(self) -> int:
        return len(self.building)


def label_matches(m: MatchSet, mask: GisMask) -> LabeledMatchSet:
    """Split pairs by the mask class under each full-basemap coordinate."""
    ground: list[MatchPair] = []
    building: list[MatchPair] = []
    ou, ov = m.window_origin.u, m.window_origin.v
    for pair in m.pairs:
        full = PixelPoint(pair.basemap_pt.u + ou, pair.basemap_pt.v + ov)
        if classify(full, mask) is PixelClass.BUILDING:
            building.append(pair)
        else:
            ground.append(pair)
    return LabeledMatchSet(tuple(ground), tuple(building))


def select_valid(l: LabeledMatchSet, c: FilterConfig) -> tuple[list[MatchPair], FilterBranch]:
    """Pick the match subset used for homography estimation.

    Decision rule (T = c.threshold_t, strict ratio comparison):
        if n_ground >= T:
            ground        if n_building / n_ground < ratio
            building      otherwise
        elif n_building >= T: building
        else: ground + building

    The ratio test uses exact integer arithmetic when the ratio is
    integral, so a tie like n_building == 3 * n_ground never depends on
    float rounding: ties fail the strict "<" and select building.
    """
    n_g = l.n_ground
    n_b = l.n_building
    if n_g >= c.threshold_t:
        if _ratio_below(n_b, n_g, c.ratio):
            return list(l.ground), FilterBranch.GROUND_DOMINANT
        return list(l.building), FilterBranch.BUILDING_DOMINANT
    if n_b >= c.threshold_t:
        return list(l.building), FilterBranch.BUILDING_ONLY
    return list(l.ground) + list(l.building), FilterBranch.UNION


def _ratio_below(n_building: int, n_ground: int, ratio: float) -> bool:
    """n_building / n_ground < ratio, exact for integral ratios. n_ground > 0."""
    if float(ratio).is_integer():
        return n_building < int(ratio) * n_ground
    return n_building < ratio * n_ground


def union_pairs(l: LabeledMatchSet) -> list[MatchPair]:
    """All labeled pairs, ground first — the no-filter baseline."""
    return list(l.ground) + list(l.building)
