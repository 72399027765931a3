"""Multi-surface and voxel shape targets for single-view shape prediction."""

from .errors import *  # noqa: F401,F403
from .geometry import (
    CANONICAL_DIR,
    OBJECT,
    VIEWER,
    OrthoCamera,
    RigidTransform,
    TriMesh,
    ViewRig,
    build_view_rig,
    direction_from_angles,
    normalize_mesh,
)
from .meshio import load_mesh, load_point_cloud, save_mesh, save_point_cloud
from .raster import MultiSurface, SurfaceBranch, make_input, read_msdi, render_multisurface, write_msdi
from .volumetric import (
    GridSpec,
    ScalarField,
    VoxelGrid,
    marching_cubes,
    read_msvx,
    voxelize_solid,
    voxelize_surface,
    write_msvx,
)
from .fusion import OrientedPointCloud, carve_occupancy, fuse_point_cloud, fuse_tsdf
from .metrics import (
    EvalRecord,
    SurfaceSampler,
    depth_error,
    projection_loss,
    silhouette_iou,
    surface_distance,
    voxel_iou,
)
from .predictors import OraclePredictor, Prediction, PredictorInput, RetrievalPredictor, make_targets

__version__ = "0.1.0"
