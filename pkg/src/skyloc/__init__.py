"""skyloc: visual geo-localization for aerial vehicles.

Offline, a pose grid over a synthetic terrain is rendered into color and
depth views and encoded into a descriptor database. Online, a single
query image is localized in 6 DOF by global-descriptor retrieval, local
feature matching, depth-lifted PnP with RANSAC, and a refinement gate,
then converted to geographic coordinates.
"""

from .database import DatabaseEntry, DescriptorDatabase, build_database, load_database
from .features import (
    Codebook,
    Keypoint,
    LocalFeature,
    Match,
    build_codebook,
    describe_local,
    detect_keypoints,
    encode_global,
    match_local,
)
from .geodesy import GeoPoint, LocalFrame, LocalPoint, geo_to_local, local_to_geo
from .geometry import CameraModel, PoseSE3, camera_from_fov
from .localize import (
    LocalizationResult,
    LocalizeConfig,
    RetrievalConfig,
    Unlocalized,
    localize,
    retrieve_top_n,
    undistort,
)
from .experiment import (
    FlightSpec,
    InterferenceSpec,
    MetricsTable,
    export_report,
    generate_flight,
    perturb_image,
    run_experiment,
)
from .pnp import Correspondence2D3D, PnPConfig, PnPResult, solve_pnp_ransac
from .posegrid import (
    GridSpec,
    elevation_band,
    enumerate_poses,
    nadir_footprint,
    suggest_heading_count,
    suggest_spacing,
)
from .world import RenderedView, Terrain, generate_terrain, load_terrain, render, sample_height, save_terrain

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
