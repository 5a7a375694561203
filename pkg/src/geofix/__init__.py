"""geofix: GPS-denied aerial geolocalization against a georeferenced basemap.

Per-frame chain: keypoint matching against a basemap window, building-mask
labeling and match selection, robust homography estimation, frame-corner
projection, area-centroid positioning, and WGS84 conversion. A simulator
with exact ground truth and an evaluation harness make the accuracy
behavior measurable without flight data.
"""

from .errors import (
    BackendUnavailable,
    ConfigInvalid,
    DegenerateConfiguration,
    DegenerateQuad,
    DocumentMalformed,
    GeofixError,
    InsufficientClassPixels,
    InsufficientMatches,
    MatchFailed,
    MismatchedSequences,
    NoConsensus,
    NoFootprints,
    NoOkFrames,
    PointAtInfinity,
    WaypointOutsideBasemap,
)
from .geodesy import (
    EARTH_RADIUS_M,
    METERS_PER_DEG_LAT,
    GeoPoint,
    GeoTransform,
    PixelPoint,
    geodesic_distance_m,
    gps_to_pixel,
    load_world_file,
    pixel_to_gps,
    save_world_file,
)
from .footprints import BuildingFootprint, ParseResult, parse_footprints
from .mask import GisMask, PixelClass, classify, load_rle, rasterize, save_pgm, save_rle
from .matching import (
    ExternalProcessBackend,
    MatchPair,
    MatchSet,
    MatcherBackend,
    NccBackend,
    SyntheticBackend,
    synthetic_matches,
)
from .gisfilter import FilterBranch, FilterConfig, LabeledMatchSet, label_matches, select_valid
from .homography import (
    Homography,
    HomographyEstimate,
    RansacConfig,
    apply,
    dlt,
    ransac_estimate,
    reprojection_errors,
)
from .geopositioning import FixStatus, GeoFix, Trajectory, centroid, geolocate_frame, project_frame
from .simulator import MatchNoiseConfig, SimFlight, SimFrame, emit_matches, generate_flight
from .pipeline import (
    ComparisonTable,
    EvaluationReport,
    FrameInput,
    PipelineConfig,
    compare_runs,
    evaluate,
    improvement_pct,
    load_config,
    run_pipeline,
)

__version__ = "0.1.0"
