"""Exception hierarchy for the geofix pipeline.

Every error raised by library code derives from GeofixError so callers can
catch pipeline failures with a single except clause. The per-frame driver
absorbs all of these into a NoFix status; only configuration problems
escape to the CLI.
"""


class GeofixError(Exception):
    """Base class for all geofix errors."""


class ConfigInvalid(GeofixError):
    """A configuration file or value set fails validation before a run."""


class DocumentMalformed(GeofixError):
    """A footprint source document could not be parsed at all."""


class NoFootprints(GeofixError):
    """The document parsed cleanly but contained zero building footprints."""


class InsufficientClassPixels(GeofixError):
    """A mask lacks enough pixels of the requested class for sampling."""


class BackendUnavailable(GeofixError):
    """An external matcher process is not reachable or has died."""


class MatchFailed(GeofixError):
    """The matcher ran but reported an error instead of a match set."""


class PointAtInfinity(GeofixError):
    """A projective transform sent the point to (or near) the line at infinity."""


class DegenerateConfiguration(GeofixError):
    """Point correspondences are collinear/coincident; the system is singular."""


class InsufficientMatches(GeofixError):
    """Fewer correspondences than the minimal sample size."""


class NoConsensus(GeofixError):
    """RANSAC finished without a model reaching the inlier quorum."""


class DegenerateQuad(GeofixError):
    """A projected frame quadrilateral is self-intersecting or has ~zero area."""


class WaypointOutsideBasemap(GeofixError):
    """A simulated flight waypoint falls outside the basemap raster."""


class NoOkFrames(GeofixError):
    """Evaluation was requested on a trajectory with zero Ok fixes."""


class MismatchedSequences(GeofixError):
    """Two runs being compared do not cover the same frame sets."""
